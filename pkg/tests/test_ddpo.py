import inspect
import json

import numpy as np
import pytest
import torch

from kgmolgen.chem import from_atoms, parse_smiles
from kgmolgen.chem.corpus import load_bundled_corpus
from kgmolgen.chem.fingerprint import fingerprint
from kgmolgen.chem.graph import MolecularGraph
from kgmolgen.ddpo import (PROFILES, RewardNormalizer, RewardWeights, Trajectory,
                           collect_trajectories, ddpo_finetune, novelty_term, policy_gradient,
                           profile, q_proxy, reward, s_proxy)
from kgmolgen.ddpo.policy import log_prob_oneshot, log_prob_step, timesteps
from kgmolgen.diffusion import DiffusionSchedule, GraphScoreDiffusion, ScoreNetwork


# -- rewards ---------------------------------------------------------------------

def test_profiles_verbatim():
    u = PROFILES["unconditional"]
    assert (u.k1, u.k2, u.k3, u.w_val, u.w_nov) == (0.0, 0.0, 1.0, 0.7, 0.2)
    t = PROFILES["targeted"]
    assert (t.k1, t.k2, t.k3, t.w_val, t.w_nov) == (0.4, 0.3, 0.2, 0.7, 0.3)


def test_unknown_profile_lists_available():
    with pytest.raises(KeyError, match="targeted.*unconditional|unconditional.*targeted"):
        profile("bogus")


def test_weight_validation():
    with pytest.raises(ValueError):
        RewardWeights(w_val=0.7, w_nov=0.3, w_ctx=0.2)
    with pytest.raises(ValueError):
        RewardWeights(k4=0.0)


def overbonded_single_atom():
    return MolecularGraph(np.array([[1.0, 0, 0, 0]]), np.array([[5.0]]))


def test_invalid_reward_is_exactly_minus_k4():
    g = overbonded_single_atom()
    assert reward(g, w=PROFILES["unconditional"]) == -1.0
    assert reward(g, w=RewardWeights(k4=2.5)) == -2.5
    assert reward(MolecularGraph(np.zeros((0, 4)), np.zeros((0, 0)))) == -1.0


def test_valid_reward_formula():
    g = parse_smiles("CCO")
    # no training set -> novelty term 1
    assert reward(g, w=PROFILES["unconditional"]) == pytest.approx(0.7 + 0.2)
    t = PROFILES["targeted"]
    expected = 0.2 * (0.7 + 0.3) + 0.4 * q_proxy(g) + 0.3 * s_proxy(g)
    assert reward(g, w=t) == pytest.approx(expected)


def test_context_term():
    g = parse_smiles("CCO")
    w = RewardWeights(w_val=0.5, w_nov=0.0, w_ctx=0.5)
    c = np.array([1.0, 2.0])
    pred = lambda gs: np.array([[1.0, 2.0]])
    assert reward(g, c, w, predictor=pred) == pytest.approx(1.0)
    far = lambda gs: np.array([[3.0, 2.0]])
    assert reward(g, c, w, predictor=far) == pytest.approx(0.5 + 0.5 * np.exp(-2.0))


def test_q_proxy_examples():
    assert q_proxy(parse_smiles("C1=CC=CC=C1")) == 1.0
    assert q_proxy(parse_smiles("CO")) == 0.75


def test_q_proxy_never_rises_with_extra_acceptor():
    for g in load_bundled_corpus(200):
        before = q_proxy(g)
        for i, s in enumerate(g.symbols):
            if s == "C" and g.bond_orders()[i].sum() <= 3:
                X = g.X.copy()
                X[i] = 0
                X[i, g.vocab.index("N")] = 1
                assert q_proxy(MolecularGraph(X, g.A)) <= before


def spiro_dense():
    # ladder of three fused 4-rings plus a spiro triangle on two corners
    bonds = [(0, 1, 1), (1, 2, 1), (2, 3, 1), (4, 5, 1), (5, 6, 1), (6, 7, 1)]
    bonds += [(k, k + 4, 1) for k in range(4)]
    bonds += [(0, 8, 1), (8, 9, 1), (9, 0, 1), (7, 10, 1), (10, 11, 1), (11, 7, 1)]
    return from_atoms(["C"] * 12, bonds)


def test_s_proxy_examples():
    assert s_proxy(parse_smiles("CCOCCN")) == 1.0
    assert s_proxy(spiro_dense()) == pytest.approx(0.35)


def test_s_proxy_never_rises_with_ring():
    for smi in ["CCCCCC", "C1CCCC1C", "C1CC2CC1C2", "CC(C)(C)CC"]:
        g = parse_smiles(smi)
        n = g.n_atoms
        bonds = g.bonds()
        ends = [i for i in range(n) if g.bond_orders()[i].sum() <= 3]
        ring = from_atoms(g.symbols + ["C", "C"], bonds + [(ends[0], n, 1), (n, n + 1, 1), (n + 1, ends[0], 1)])
        assert s_proxy(ring) <= s_proxy(g)


def _fps_with_similarity(f, num, den):
    """Training fingerprint t with |f & t| / |f | t| = num/den exactly."""
    on = np.nonzero(f)[0]
    off = np.nonzero(~f)[0]
    k = int(np.ceil(len(on) / den))
    assert num * k <= len(on)
    t = np.zeros_like(f)
    t[on[:num * k]] = True
    t[off[:den * k - len(on)]] = True
    return t[None]


def test_novelty_examples():
    g = parse_smiles("CC(O)CN")
    f = fingerprint(g)
    assert novelty_term(g, f[None]) == 0.0
    assert novelty_term(g, _fps_with_similarity(f, 3, 10)) == 1.0
    assert novelty_term(g, _fps_with_similarity(f, 3, 5)) == pytest.approx(0.4)


# -- policy gradient --------------------------------------------------------------

def tiny_net(T, seed=0):
    torch.manual_seed(seed)
    return ScoreNetwork(4, 6, 1, 4, T=T).double()


def fake_trajectory(T, n=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    X = torch.randn(T + 1, n, 4, generator=g, dtype=torch.float64)
    U = torch.triu(torch.randn(T + 1, n, n, generator=g, dtype=torch.float64), 1)
    return Trajectory(X, U + U.transpose(1, 2), from_atoms(["C"] * n, []), 0.0)


def test_equal_rewards_give_zero_gradient():
    T = 20
    net = tiny_net(T)
    trajs = [fake_trajectory(T, 2, s) for s in range(3)]
    rewards = np.full(3, 0.9)
    grads = policy_gradient(net, DiffusionSchedule(T), trajs, rewards - rewards.mean())
    assert all(not g.any() for g in grads.values())


def test_single_timestep_gradient_matches_finite_differences():
    T = 10
    net = tiny_net(T, 1)
    s = DiffusionSchedule(T)
    tr = fake_trajectory(T, 1, 2)
    assert timesteps(T, 10) == [1]
    r = 0.8
    grads = policy_gradient(net, s, [tr], [r], stride=10)

    def objective():
        return r * log_prob_oneshot(net, s, tr.X[None, 1], tr.A[None, 1], tr.X[None, 0],
                                    tr.A[None, 0], 1).sum().item()

    names = [k for k, _ in net.named_parameters()]
    analytic = torch.cat([grads[k].ravel() for k in names])
    numeric = []
    h = 1e-6
    with torch.no_grad():
        for _, p in net.named_parameters():
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = objective()
                flat[i] = old - h
                down = objective()
                flat[i] = old
                numeric.append((up - down) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    assert ((analytic - numeric).norm() / numeric.norm()).item() < 1e-3


def test_estimators_agree_when_T_is_one():
    net = tiny_net(1)
    s = DiffusionSchedule(1)
    trajs = [fake_trajectory(1, 3, k) for k in range(2)]
    a = policy_gradient(net, s, trajs, [1.0, -1.0], estimator="modified")
    b = policy_gradient(net, s, trajs, [1.0, -1.0], estimator="stepwise")
    for k in a:
        assert torch.allclose(a[k], b[k], rtol=1e-12, atol=0)


def test_stepwise_density_is_euler_maruyama_gaussian():
    T = 10
    net = tiny_net(T)
    s = DiffusionSchedule(T)
    tr = fake_trajectory(T, 1)
    lp = log_prob_step(net, s, tr.X[None, 5], tr.A[None, 5], tr.X[None, 4], tr.A[None, 4], 5)
    # one node: no A entries, four X entries with variance beta_5
    with torch.no_grad():
        from kgmolgen.diffusion import score_forward
        sx, _ = score_forward(net, tr.X[None, 5], tr.A[None, 5], 5, s)
        beta = s.beta[5]
        mu = tr.X[5] + 0.5 * beta * tr.X[5] + beta * sx[0]
        ref = -0.5 * ((tr.X[4] - mu) ** 2).sum() / beta - 2 * np.log(2 * np.pi * beta)
    assert lp.item() == pytest.approx(ref.item(), rel=1e-12)


def test_policy_gradient_rejects_bad_arguments():
    net = tiny_net(5)
    with pytest.raises(ValueError):
        policy_gradient(net, DiffusionSchedule(5), [fake_trajectory(5)], [1.0], estimator="other")
    with pytest.raises(ValueError):
        policy_gradient(net, DiffusionSchedule(5), [fake_trajectory(5)], [1.0, 2.0])


def test_reward_normalizer_matches_numpy():
    r = np.random.default_rng(0).normal(size=50)
    norm = RewardNormalizer()
    norm.update(r[:20])
    norm.update(r[20:])
    assert norm.mean == pytest.approx(r.mean()) and norm.std == pytest.approx(r.std())


# -- trajectories and fine-tuning ---------------------------------------------------

@pytest.fixture(scope="module")
def model():
    return GraphScoreDiffusion(T=10, hidden=16, layers=2, time_dim=8, steps=30, batch_size=16,
                               seed=0).fit(load_bundled_corpus(200))


def validity_reward(g):
    return reward(g, w=RewardWeights(w_val=1.0, w_nov=0.0))


def test_trajectories_deterministic_and_full_length(model):
    a = collect_trajectories(model, 2, validity_reward, seed=4)
    b = collect_trajectories(model, 2, validity_reward, seed=4)
    for x, y in zip(a, b):
        assert torch.equal(x.X, y.X) and torch.equal(x.A, y.A) and x.reward == y.reward
        assert len(x) == model.T + 1


def test_invalid_terminal_reward(model):
    trajs = collect_trajectories(model, 16, validity_reward, seed=1, n_atoms=9)
    from kgmolgen.chem import validity_check
    for tr in trajs:
        if not validity_check(tr.molecule).valid:
            assert tr.reward == -1.0


def test_default_learning_rate():
    assert inspect.signature(ddpo_finetune).parameters["lr"].default == 1e-5


def test_zero_learning_rate_leaves_parameters(model, tmp_path):
    before = {k: v.clone() for k, v in model.network_.state_dict().items()}
    res = ddpo_finetune(model, 3, 8, validity_reward, lr=0.0, seed=0, out_dir=tmp_path)
    for k, v in model.network_.state_dict().items():
        assert torch.equal(v, before[k])
    lines = (tmp_path / "rewards.jsonl").read_text().splitlines()
    assert [json.loads(x)["iteration"] for x in lines] == [0, 1, 2]
    assert res.iterations_run == 3 and len(res.reward_trace) == 3


def test_gradient_clip_bounds_update(model):
    before = [p.detach().clone() for p in model.network_.parameters()]
    ddpo_finetune(model, 1, 8, validity_reward, lr=1.0, seed=0, baseline="batch", max_grad_norm=1e-3)
    delta = torch.sqrt(sum(((p.detach() - b) ** 2).sum() for p, b in zip(model.network_.parameters(), before)))
    assert delta.item() <= 1e-3 * (1 + 1e-5)
    with torch.no_grad():
        for p, b in zip(model.network_.parameters(), before):
            p.copy_(b)


def test_unknown_baseline(model):
    with pytest.raises(ValueError):
        ddpo_finetune(model, 1, 2, validity_reward, baseline="median")
