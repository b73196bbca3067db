"""Command line interface: ``kgmolgen <command> [options]``.

Commands
    train-kge        train KGE models over several seeds and write a report
    train-diffusion  train the graph diffusion model on a SMILES corpus
    train-pin        train the property inference network on KGE contexts
    generate         sample molecules (optionally guided) and write metrics
    metrics          recompute metrics from a SMILES file
    finetune         reward fine-tuning of a diffusion checkpoint
    pipeline         run every stage and keep a manifest of artifacts
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from .chem.corpus import bundled_corpus_path, read_smiles_file
from .chem.smiles import parse_smiles
from .config import DEFAULTS, Config, ConfigError, format_config, load_config
from .ddpo import PROFILES, RewardWeights, ddpo_finetune, reward, training_fingerprints
from .diffusion import GraphScoreDiffusion
from .kg.store import load_triples, split
from .kg.synthetic import bundled_kg_dir, read_drugs
from .kge.estimator import KGEModel
from .kge.evaluation import evaluate, format_report, report_json
from .kge.model import EmbeddingTable
from .metrics import evaluate_smiles, metrics_from_file, molecule_to_line
from .pin import PropertyInferenceNetwork, context_from_kge
from .rng import child_seeds

log = logging.getLogger("kgmolgen")

STAGES = ("kge", "context", "pin", "diffusion", "finetune", "generate")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


# -- file helpers ----------------------------------------------------------------

def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def atomic_save(path, writer) -> Path:
    """Call ``writer(tmp_path)`` then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- inputs -------------------------------------------------------------------------

def corpus_path(cfg: Config) -> Path:
    return Path(cfg["corpus.path"]) if cfg["corpus.path"] else bundled_corpus_path()


def load_corpus(cfg: Config):
    path = corpus_path(cfg)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    graphs = [g for _, _, g in read_smiles_file(path)]
    limit = cfg["corpus.limit"]
    return graphs[:limit] if limit else graphs


def kg_dir(cfg: Config) -> Path:
    return Path(cfg["kg.dir"]) if cfg["kg.dir"] else bundled_kg_dir()


def kg_files(cfg: Config) -> dict[str, Path]:
    d = kg_dir(cfg)
    files = {name: d / f"{name}.tsv" for name in ("triples", "types", "constraints")}
    for name, p in files.items():
        if not p.is_file():
            raise FileNotFoundError(f"missing {name} file: {p}")
    return files


def load_kg(cfg: Config):
    f = kg_files(cfg)
    return load_triples(f["triples"], f["types"], f["constraints"])


def parse_context_spec(text: str):
    """``label`` or ``s,r,o`` with ``_`` marking the blank slot."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) == 1:
        return parts[0]
    if len(parts) != 3:
        raise ConfigError(f"guidance.context must be a label or s,r,o pattern: {text!r}")
    return tuple(None if p == "_" else p for p in parts)


def reward_weights(name_or_path: str) -> RewardWeights:
    if name_or_path in PROFILES:
        return PROFILES[name_or_path]
    p = Path(name_or_path)
    if p.is_file():
        fields = {f.name for f in dataclasses.fields(RewardWeights)}
        values = {}
        for lineno, raw in enumerate(p.read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = (s.strip() for s in line.partition("="))
            if key not in fields:
                raise ConfigError(f"{p}:{lineno}: unknown reward weight {key!r}")
            values[key] = float(val)
        return RewardWeights(**values)
    raise ConfigError(f"unknown reward profile {name_or_path!r}; available: "
                      f"{', '.join(sorted(PROFILES))} (or a key=value weights file)")


# -- stage implementations ----------------------------------------------------------

def kge_estimator(cfg: Config, seed: int) -> KGEModel:
    k = cfg.section("kge")
    return KGEModel(model=k["model"], dim=k["dim"], learning_rate=k["learning_rate"], margin=k["margin"],
                    epochs=k["epochs"], batch_size=k["batch_size"],
                    negatives_per_positive=k["negatives_per_positive"], training_mode=k["training_mode"],
                    respect_constraints=k["respect_constraints"], margin_norm=k["margin_norm"],
                    score_norm=k["score_norm"], seed=seed)


def run_train_kge(cfg: Config, out: Path) -> dict[str, Path]:
    kg = load_kg(cfg)
    parts = split(kg, cfg["kg.train_frac"], cfg["kg.valid_frac"], child_seeds(cfg["seed"], "split", 1)[0])
    seeds = [s % 2**31 for s in child_seeds(cfg["seed"], "kge", cfg["kge.n_seeds"])]
    models = [kge_estimator(cfg, s).fit(parts.train) for s in seeds]
    report = evaluate([m.embeddings_ for m in models], parts.test, kg, kg.constraints, seeds,
                      filtered=cfg["kge.filtered"], dataset=str(kg_dir(cfg)), model_name=cfg["kge.model"])
    out.mkdir(parents=True, exist_ok=True)
    emb_path = atomic_save(out / "embeddings.npz", lambda p: models[0].embeddings_.save(p))
    rep_path = atomic_write_text(out / "report.json", report_json(report) + "\n")
    atomic_write_text(out / "report.txt", "AMR / MRR / Hits@1 / Hits@10\n" + format_report(report) + "\n")
    log.info("KGE %s", format_report(report))
    return {"embeddings": emb_path, "report": rep_path}


def run_context(cfg: Config, out: Path, emb_path) -> Path:
    """Context vectors for the drug molecules and the guidance target."""
    kg = load_kg(cfg)
    emb = EmbeddingTable.load(emb_path)
    drugs = read_drugs(kg_dir(cfg) / "drugs.tsv")
    names = [d for d in drugs if d in kg.entities][: cfg["pin.n_molecules"]]
    if not names:
        raise ValueError("no drug entities with molecules found")
    C = np.stack([context_from_kge(emb, kg, d).c for d in names])
    spec = cfg["guidance.context"]
    target = context_from_kge(emb, kg, parse_context_spec(spec), cfg["guidance.composite"]) if spec else None
    smiles = np.array([drugs[d] for d in names])

    def writer(p):
        with open(p, "wb") as fh:
            np.savez(fh, names=np.array(names), smiles=smiles, contexts=C,
                     target=target.c if target else np.zeros(0),
                     target_provenance=np.array(target.provenance if target else ""))
    return atomic_save(out / "contexts.npz", writer)


def run_train_pin(cfg: Config, out: Path, contexts_path) -> Path:
    with np.load(contexts_path) as z:
        smiles, C = list(z["smiles"]), z["contexts"]
    graphs = [parse_smiles(str(s)) for s in smiles]
    p = cfg.section("pin")
    model = PropertyInferenceNetwork(hidden=p["hidden"], layers=p["layers"], steps=p["steps"],
                                     batch_size=p["batch_size"], learning_rate=p["learning_rate"],
                                     generation_steps=cfg["diffusion.T"], alpha=p["alpha"],
                                     seed=child_seeds(cfg["seed"], "pin", 1)[0] % 2**31)
    model.fit(graphs, C, kge_dim=C.shape[1])
    return atomic_save(out / "pin.pt", model.save)


def run_train_diffusion(cfg: Config, out: Path) -> Path:
    graphs = load_corpus(cfg)
    d = cfg.section("diffusion")
    ckpt_dir = out / "diffusion_checkpoints"
    model = GraphScoreDiffusion(T=d["T"], hidden=d["hidden"], layers=d["layers"], steps=d["steps"],
                                batch_size=d["batch_size"], learning_rate=d["learning_rate"],
                                weighting=d["weighting"], checkpoint_every=d["checkpoint_every"],
                                checkpoint_dir=str(ckpt_dir) if d["checkpoint_every"] else None,
                                prior_scale=d["prior_scale"],
                                seed=child_seeds(cfg["seed"], "diffusion", 1)[0] % 2**31)
    model.fit(graphs)
    return atomic_save(out / "diffusion.pt", model.save)


def run_finetune(cfg: Config, out: Path, checkpoint, profile: str, resume: bool = False) -> Path:
    weights = reward_weights(profile)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / "finetune_state.json"
    start = 0
    if resume and state_path.is_file() and (out / "finetuned.pt").is_file():
        start = json.loads(state_path.read_text())["iterations"]
        checkpoint = out / "finetuned.pt"
    elif (out / "rewards.jsonl").exists():
        (out / "rewards.jsonl").unlink()
    model = GraphScoreDiffusion.load(checkpoint)
    fps = training_fingerprints(load_corpus(cfg))
    f = cfg.section("finetune")
    atomic_write_text(out / "finetune_config.cfg", format_config(cfg))
    atomic_write_text(out / "reward_weights.json", _json(weights.to_dict()))
    result = ddpo_finetune(
        model, f["iterations"], f["batch_size"], lambda g: reward(g, w=weights, training_fps=fps),
        lr=f["lr"], stride=f["stride"], estimator=f["estimator"], baseline=f["baseline"],
        seed=child_seeds(cfg["seed"], "finetune", 1)[0], patience=f["patience"],
        checkpoint_every=f["checkpoint_every"], out_dir=str(out), start_iteration=start,
        max_grad_norm=f["max_grad_norm"])
    path = atomic_save(out / "finetuned.pt", model.save)
    atomic_write_text(state_path, _json({"iterations": start + result.iterations_run,
                                         "stopped_early": result.stopped_early}))
    return path


def run_generate(cfg: Config, out_path: Path, checkpoint, pin_path=None, target=None,
                 n: int | None = None) -> tuple[Path, Path]:
    model = GraphScoreDiffusion.load(checkpoint)
    guidance = None
    if target is not None:
        if pin_path is None:
            raise ConfigError("guided generation requires a PIN checkpoint")
        pin = PropertyInferenceNetwork.load(pin_path, vocab=model.vocab_, kge_dim=len(target))
        guidance = pin.guidance(np.asarray(target, float), cfg["guidance.scale"])
    n = cfg["generate.n"] if n is None else n
    n_atoms = cfg["generate.n_atoms"] or None
    res = model.sample(n, n_atoms=n_atoms, guidance=guidance,
                       seed=child_seeds(cfg["seed"], "generate", 1)[0])
    lines = [molecule_to_line(g) for g in res.molecules]
    fps = training_fingerprints(load_corpus(cfg))
    metrics = evaluate_smiles(lines, fps)
    metrics["guided"] = guidance is not None
    smi = atomic_write_text(out_path, "".join(line + "\n" for line in lines))
    js = atomic_write_text(Path(str(out_path) + ".json"), _json(metrics))
    return smi, js


def _target_from_contexts(path):
    with np.load(path) as z:
        t = z["target"]
    return t if t.size else None


# -- pipeline -------------------------------------------------------------------------

def _stage_inputs(cfg: Config, stage: str, upstream: dict[str, str]) -> str:
    prefixes = {"kge": ("kg.", "kge."), "context": ("kg.", "guidance.", "pin.n_molecules"),
                "pin": ("pin.", "diffusion.T"), "diffusion": ("diffusion.", "corpus."),
                "finetune": ("finetune.", "corpus."), "generate": ("generate.", "guidance.", "corpus.")}[stage]
    keys = {k: v for k, v in cfg.items() if k == "seed" or k.startswith(prefixes)}
    if stage == "kge":
        keys["_kg_files"] = {n: sha256_file(p) for n, p in kg_files(cfg).items()}
    if stage in ("diffusion", "finetune", "generate"):
        keys["_corpus"] = sha256_file(corpus_path(cfg))
    payload = json.dumps({"config": keys, "upstream": upstream}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def validate_pipeline(cfg: Config) -> list[str]:
    """Check every declared input without running any compute."""
    kg_files(cfg)
    if not (kg_dir(cfg) / "drugs.tsv").is_file():
        raise FileNotFoundError(f"missing drugs file: {kg_dir(cfg) / 'drugs.tsv'}")
    if not corpus_path(cfg).is_file():
        raise FileNotFoundError(f"corpus file not found: {corpus_path(cfg)}")
    reward_weights(cfg["finetune.profile"])
    if not cfg["guidance.context"]:
        raise ConfigError("pipeline needs guidance.context (entity label or s,r,o pattern)")
    parse_context_spec(cfg["guidance.context"])
    if cfg["finetune.estimator"] not in ("modified", "stepwise"):
        raise ConfigError(f"finetune.estimator must be modified or stepwise")
    if cfg["diffusion.weighting"] not in ("sigma2", "none"):
        raise ConfigError("diffusion.weighting must be sigma2 or none")
    return list(STAGES)


def run_pipeline(cfg: Config, out: Path, dry_run: bool = False) -> dict:
    plan = validate_pipeline(cfg)
    if dry_run:
        return {"stages": plan, "dry_run": True}
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.cfg", format_config(cfg))
    manifest_path = out / "manifest.json"
    old = json.loads(manifest_path.read_text()) if manifest_path.is_file() else {"stages": {}}
    manifest = {"stages": {}}
    hashes: dict[str, str] = {}
    paths: dict[str, Path] = {}

    def stage(name, upstream_names, fn, artifact: Path):
        upstream = {u: hashes[u] for u in upstream_names}
        inputs = _stage_inputs(cfg, name, upstream)
        prev = old["stages"].get(name)
        if prev and prev["inputs"] == inputs and artifact.is_file() and sha256_file(artifact) == prev["sha256"]:
            log.info("stage %s: up to date, skipped", name)
            entry = dict(prev, skipped=True)
        else:
            try:
                fn()
            except Exception as exc:
                manifest["failed"] = name
                atomic_write_text(manifest_path, _json(manifest))
                raise StageError(name, exc) from exc
            entry = {"artifact": str(artifact.relative_to(out)), "sha256": sha256_file(artifact),
                     "inputs": inputs, "skipped": False}
        manifest["stages"][name] = entry
        hashes[name] = entry["sha256"]
        paths[name] = artifact
        atomic_write_text(manifest_path, _json(manifest))

    stage("kge", [], lambda: run_train_kge(cfg, out / "kge"), out / "kge" / "embeddings.npz")
    stage("context", ["kge"], lambda: run_context(cfg, out, paths["kge"]), out / "contexts.npz")
    stage("pin", ["context"], lambda: run_train_pin(cfg, out, paths["context"]), out / "pin.pt")
    stage("diffusion", [], lambda: run_train_diffusion(cfg, out), out / "diffusion.pt")
    stage("finetune", ["diffusion"],
          lambda: run_finetune(cfg, out / "finetune", paths["diffusion"], cfg["finetune.profile"]),
          out / "finetune" / "finetuned.pt")
    stage("generate", ["finetune", "pin", "context"],
          lambda: run_generate(cfg, out / "samples.smi", paths["finetune"], paths["pin"],
                               _target_from_contexts(paths["context"])),
          out / "samples.smi")
    return manifest


# -- argument parsing ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_default: str):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", default=out_default, help="output path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgmolgen", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-kge", help="train and evaluate KGE models")
    _common(p, "runs/kge")

    p = sub.add_parser("train-diffusion", help="train the diffusion model")
    _common(p, "runs/diffusion")

    p = sub.add_parser("train-pin", help="train the property inference network")
    _common(p, "runs/pin")
    p.add_argument("--kge", required=True, help="embeddings .npz from train-kge")

    p = sub.add_parser("generate", help="sample molecules")
    _common(p, "samples.smi")
    p.add_argument("--checkpoint", required=True, help="diffusion checkpoint")
    p.add_argument("--n", type=int, help="number of molecules")
    p.add_argument("--pin", help="PIN checkpoint (required for guidance)")
    p.add_argument("--kge", help="embeddings .npz used to resolve guidance.context")
    p.add_argument("--guidance", help="entity label or s,r,o pattern (overrides guidance.context)")

    p = sub.add_parser("metrics", help="validity / uniqueness / novelty of a SMILES file")
    p.add_argument("smiles", help="SMILES file, one molecule per line")
    p.add_argument("--train", help="training corpus (default: bundled corpus)")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("finetune", help="reward fine-tuning")
    _common(p, "runs/finetune")
    p.add_argument("--checkpoint", required=True, help="diffusion checkpoint")
    p.add_argument("--profile", help="reward profile name or weights file")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float, help="learning rate eta")
    p.add_argument("--resume", action="store_true", help="continue a previous run in --out")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _common(p, "runs/pipeline")
    p.add_argument("--profile", help="reward profile name or weights file")
    p.add_argument("--dry-run", action="store_true", help="validate inputs without compute")
    return parser


def _config(args) -> Config:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "profile", None):
        overrides["finetune.profile"] = args.profile
    if getattr(args, "iterations", None) is not None:
        overrides["finetune.iterations"] = args.iterations
    if getattr(args, "lr", None) is not None:
        overrides["finetune.lr"] = args.lr
    if getattr(args, "guidance", None):
        overrides["guidance.context"] = args.guidance
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        if args.command == "metrics":
            train = args.train or bundled_corpus_path()
            for p in (args.smiles, train):
                if not Path(p).is_file():
                    raise FileNotFoundError(f"file not found: {p}")
            text = _json(metrics_from_file(args.smiles, train))
            if args.out:
                atomic_write_text(args.out, text)
            else:
                sys.stdout.write(text)
            return 0
        cfg = _config(args)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return 0
        out = Path(args.out)
        if args.command == "train-kge":
            kg_files(cfg)
            paths = run_train_kge(cfg, out)
            print((out / "report.txt").read_text().strip())
            print(paths["embeddings"])
        elif args.command == "train-diffusion":
            print(run_train_diffusion(cfg, out))
        elif args.command == "train-pin":
            ctx = run_context(cfg, out, args.kge)
            print(run_train_pin(cfg, out, ctx))
        elif args.command == "generate":
            target = None
            if cfg["guidance.context"]:
                if not args.pin:
                    raise ConfigError("guidance requested but no --pin checkpoint given")
                if not args.kge:
                    raise ConfigError("guidance requested but no --kge embeddings given")
                target = context_from_kge(EmbeddingTable.load(args.kge), load_kg(cfg),
                                          parse_context_spec(cfg["guidance.context"]),
                                          cfg["guidance.composite"]).c
            smi, js = run_generate(cfg, out, args.checkpoint, args.pin, target, args.n)
            print(js.read_text().strip())
        elif args.command == "finetune":
            reward_weights(cfg["finetune.profile"])
            print(run_finetune(cfg, out, args.checkpoint, cfg["finetune.profile"], args.resume))
        elif args.command == "pipeline":
            result = run_pipeline(cfg, out, args.dry_run)
            if args.dry_run:
                print("config OK; stages: " + " -> ".join(result["stages"]))
            else:
                print(_json(result).strip())
    except (ConfigError, FileNotFoundError, KeyError, StageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
