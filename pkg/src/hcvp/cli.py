"""Command-line surface.

Subcommands: gen (dataset), train, eval, ablate, sweep, gradcheck. Every
command that produces files takes --out and writes a manifest.json there
before computing anything; a non-empty output directory is refused unless
--force is given. Exit codes: 0 success, 1 I/O failure, 2 usage or
configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import evaluate, figures
from .data import ConfigError, DatasetConfig, export_dataset, generate, make_splits
from .runtime import limit_blas_threads, tune_allocator
from .train import (
    TrainConfig,
    TrainingAbortedError,
    ablate,
    load_checkpoint,
    resolve_samples,
    restore_model,
    sweep,
    train,
)

GRADCHECK_TOL = 1e-4


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def prepare_out_dir(out: str, force: bool) -> Path:
    path = Path(out)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force to reuse)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out_dir: Path, command: str, config: dict, seed: int, hashes: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "out_dir": str(out_dir),
        "artifact_hashes": hashes,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _hash_dict(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _hash_dataset_dir(path: Path) -> str:
    h = hashlib.sha256()
    for name in sorted(p.name for p in path.iterdir() if p.is_file()):
        h.update(name.encode())
        h.update((path / name).read_bytes())
    return h.hexdigest()[:16]


# ----------------------------------------------------------------------
# flag groups

def _dataset_flags(p: argparse.ArgumentParser, per_cell_default: int) -> None:
    p.add_argument("--classes", type=int, default=4, help="number of shape classes")
    p.add_argument("--domains", type=int, default=4, help="number of style domains")
    p.add_argument("--per-cell", type=int, default=per_cell_default, help="samples per (class, domain)")
    p.add_argument(
        "--spurious",
        type=float,
        default=None,
        help="label agreement of the spurious patch in source domains (omit to disable)",
    )
    p.add_argument(
        "--spurious-unseen",
        type=float,
        default=None,
        help="patch agreement in the last domain (default: 1 - SPURIOUS)",
    )


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("hcvp", "erm"), default="hcvp")
    p.add_argument("--unseen", type=int, default=3, help="held-out domain id")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--lambda-pcl", type=float, default=0.1)
    p.add_argument("--lambda-cci", type=float, default=1.0)
    p.add_argument("--no-pcl", action="store_true", help="drop the prompt contrastive loss")
    p.add_argument("--no-cci", action="store_true", help="drop the class-conditioned loss")
    p.add_argument("--tau", type=float, default=0.1, help="contrastive temperature")
    p.add_argument(
        "--no-normalize-sim",
        action="store_true",
        help="raw dot-product similarity instead of cosine",
    )
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--pretrain-steps", type=int, default=300)
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")
    p.add_argument("--data", default=None, help="train from an exported dataset directory")
    p.add_argument("--data-seed", type=int, default=7, help="dataset generation seed")
    _dataset_flags(p, per_cell_default=40)


def _dataset_from_args(args, seed: int) -> DatasetConfig:
    return DatasetConfig(
        classes=args.classes,
        domains=args.domains,
        per_cell=args.per_cell,
        seed=seed,
        spurious=args.spurious,
        spurious_last=args.spurious_unseen,
    )


def _train_config_from_args(args) -> TrainConfig:
    data_dir = None
    if args.data is not None:
        from .data import load_dataset

        _, ds_config = load_dataset(Path(args.data))
        data_dir = str(Path(args.data).resolve())
    else:
        ds_config = _dataset_from_args(args, args.data_seed)
    return TrainConfig(
        method=args.method,
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        lambda_pcl=args.lambda_pcl,
        lambda_cci=args.lambda_cci,
        use_pcl=not args.no_pcl,
        use_cci=not args.no_cci,
        temperature=args.tau,
        normalize_sim=not args.no_normalize_sim,
        seed=args.seed,
        unseen_domain=args.unseen,
        eval_every=args.eval_every,
        pretrain_steps=args.pretrain_steps,
        precision=args.precision,
        dataset=ds_config,
        data_dir=data_dir,
    )


def _input_hashes(cfg: TrainConfig) -> dict:
    if cfg.data_dir is not None:
        return {"dataset_dir": _hash_dataset_dir(Path(cfg.data_dir))}
    return {"dataset_config": _hash_dict(asdict(cfg.dataset))}


# ----------------------------------------------------------------------
# commands

def cmd_gen(args) -> int:
    config = _dataset_from_args(args, args.seed)
    config.validate()
    out = prepare_out_dir(args.out, args.force)
    write_manifest(out, "gen", asdict(config), args.seed, {"dataset_config": _hash_dict(asdict(config))})
    samples = generate(config)
    export_dataset({"all": samples}, out, config)
    print(f"dataset: {len(samples)} samples -> {out}")
    print("samples per (class, domain) cell:")
    counts: dict[tuple[int, int], int] = {}
    for s in samples:
        counts[(s.label, s.domain)] = counts.get((s.label, s.domain), 0) + 1
    print("class\\domain  " + " ".join(f"{d:>5}" for d in range(config.domains)))
    for c in range(config.classes):
        row = " ".join(f"{counts.get((c, d), 0):>5}" for d in range(config.domains))
        print(f"{c:>12}  {row}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    out = prepare_out_dir(args.out, args.force)
    write_manifest(out, "train", cfg.to_dict(), cfg.seed, _input_hashes(cfg))
    result = train(cfg, out_dir=out)
    figures.save_training_curves(result.records, out / "curves.png")
    print(f"method={cfg.method} seed={cfg.seed} unseen={cfg.unseen_domain}")
    print(f"best_val_accuracy={result.best_val_accuracy:.4f} at step {result.best_step}")
    print(f"final_train_accuracy={result.final_train_accuracy:.4f}")
    print(f"checkpoint={result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    cfg = ckpt.config
    out = prepare_out_dir(args.out, args.force)
    write_manifest(out, "eval", cfg.to_dict(), cfg.seed, {"checkpoint": str(args.checkpoint)})
    tune_allocator()
    with limit_blas_threads(1):
        model = restore_model(ckpt)
        samples = resolve_samples(cfg)
        plan = make_splits(samples, cfg.unseen_domain, cfg.seed)
        acc = evaluate.unseen_accuracy(model, cfg, samples, plan)
        report = evaluate.inter_domain_distance(model, cfg, samples, plan)
        chash = cfg.config_hash()
        records = [
            {
                "kind": "unseen_accuracy",
                "accuracy": acc,
                "unseen_domain": cfg.unseen_domain,
                "method": cfg.method,
                "seed": cfg.seed,
                "config_hash": chash,
            },
            {
                "kind": "inter_domain_distance",
                "mean_distance": report.mean_distance,
                "class_conditional_distance": report.class_conditional_mean,
                "pairs": {f"{a}-{b}": v for (a, b), v in report.pair_distances.items()},
                "method": cfg.method,
                "seed": cfg.seed,
                "config_hash": chash,
            },
        ]
        print(f"unseen_accuracy={acc:.4f} (domain {cfg.unseen_domain}, method {cfg.method})")
        print(
            f"inter_domain_distance mean={report.mean_distance:.4f} "
            f"class_conditional={report.class_conditional_mean:.4f}"
        )
        if cfg.method == "hcvp":
            purity = evaluate.prompt_cluster_score(model, cfg, samples, plan.val_ids)
            records.append(
                {
                    "kind": "prompt_purity",
                    **purity,
                    "method": cfg.method,
                    "seed": cfg.seed,
                    "config_hash": chash,
                }
            )
            print(
                f"prompt purity domain={purity['domain_purity']:.4f} "
                f"task={purity['task_purity']:.4f}"
            )
        if args.export_embeddings:
            csv_path = out / "embeddings.csv"
            evaluate.export_embeddings(
                model, cfg, samples, plan.val_ids + plan.test_ids, csv_path,
                kind=args.export_embeddings,
            )
            _info(f"embeddings -> {csv_path}")
    with open(out / "report.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    figures.save_distance_chart(report, out / "distances.png")
    return 0


def cmd_ablate(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(","))
    base = _train_config_from_args(args)
    out = prepare_out_dir(args.out, args.force)
    datasets = None
    if args.datasets == "both":
        datasets = {
            "diversity": base.with_overrides(
                dataset=DatasetConfig(
                    classes=args.classes, domains=args.domains, per_cell=args.per_cell,
                    seed=args.data_seed, spurious=None,
                )
            ),
            "correlation": base.with_overrides(
                dataset=DatasetConfig(
                    classes=args.classes, domains=args.domains, per_cell=args.per_cell,
                    seed=args.data_seed, spurious=0.9,
                )
            ),
        }
    write_manifest(
        out, "ablate", base.to_dict() | {"seeds": list(seeds)}, seeds[0], _input_hashes(base)
    )
    result = ablate(base, seeds, out_dir=out, jobs=args.jobs, datasets=datasets)
    figures.save_ablation_chart(result["table"], result["columns"], out / "ablation.png")
    cols = result["columns"]
    print("variant      " + "  ".join(f"{c:>12}" for c in cols))
    for variant, row in result["table"].items():
        print(f"{variant:<12} " + "  ".join(f"{row[c] * 100:12.2f}" for c in cols))
    return 0


def cmd_sweep(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(","))
    base = _train_config_from_args(args)
    out = prepare_out_dir(args.out, args.force)
    write_manifest(
        out, "sweep", base.to_dict() | {"axis": args.axis, "seeds": list(seeds)},
        seeds[0], _input_hashes(base),
    )
    values = tuple(float(v) for v in args.values.split(",")) if args.values else None
    rows = sweep(
        base, args.axis, out_dir=out, steps=args.steps, seeds=seeds, jobs=args.jobs,
        values=values,
    )
    figures.save_sweep_curve(rows, out / "sweep.png")
    print(f"lambda_{args.axis}     seed   val_accuracy   unseen_accuracy")
    for r in rows:
        print(
            f"{r['value']:<14g} {r['seed']:<6} {r['val_accuracy']:<14.4f} "
            f"{r['unseen_accuracy']:.4f}"
        )
    return 0


def cmd_gradcheck(args) -> int:
    from .autodiff import run_primitive_suite
    from .verification import full_graph_gradcheck

    tune_allocator()
    with limit_blas_threads(1):
        suite = run_primitive_suite(seed=args.seed)
        full = full_graph_gradcheck(seed=args.seed)
    for name, err in sorted(suite.per_tensor.items()):
        print(f"primitive {name:<24} max_rel_err {err:.3e}")
    print(f"full_graph {'(all trainable tensors)':<23} max_rel_err {full.max_error:.3e}")
    worst = max(suite.max_error, full.max_error)
    print(f"worst {worst:.3e} tolerance {GRADCHECK_TOL:.0e}")
    if worst > GRADCHECK_TOL:
        failures = suite.failures(GRADCHECK_TOL) | full.failures(GRADCHECK_TOL)
        _info(f"gradcheck FAILED: {failures}")
        return 3
    return 0


# ----------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="hcvp",
        description="hierarchical contrastive visual prompts: data, training, evaluation",
    )
    parser.add_argument("--config", default=None, help="key=value file merged below explicit flags")
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    p = commands["gen"] = sub.add_parser("gen", help="generate and export a synthetic dataset")
    _dataset_flags(p, per_cell_default=25)
    p.add_argument("--seed", type=int, default=7, help="dataset generation seed")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = commands["train"] = sub.add_parser("train", help="train HCVP or the ERM baseline")
    _train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = commands["eval"] = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument(
        "--export-embeddings",
        choices=("class-token", "domain-prompt", "task-prompt"),
        default=None,
    )
    p.set_defaults(func=cmd_eval)

    p = commands["ablate"] = sub.add_parser("ablate", help="loss-term ablation over seeds")
    _train_flags(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--datasets", choices=("default", "both"), default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = commands["sweep"] = sub.add_parser("sweep", help="loss-weight grid sweep on one axis")
    _train_flags(p)
    p.add_argument("--axis", choices=("pcl", "cci"), required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--values", default=None, help="override the grid, comma-separated")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = commands["gradcheck"] = sub.add_parser(
        "gradcheck", help="finite-difference verification of all gradients"
    )
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser, commands


def _read_config_file(path: Path) -> dict:
    if not path.exists():
        raise OSError(f"config file not found: {path}")
    out = {}
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _scan_config_path(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        config_path = _scan_config_path(argv)
        if config_path:
            defaults = _read_config_file(Path(config_path))
            known: set[str] = set()
            for sp in [parser, *commands.values()]:
                known |= {a.dest for a in sp._actions}
            unknown = set(defaults) - known
            if unknown:
                raise ConfigError(f"unknown keys in config file: {sorted(unknown)}")
            for sp in [parser, *commands.values()]:
                own = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in defaults.items() if k in own})
        args = parser.parse_args(argv)
        return args.func(args)
    except TrainingAbortedError as err:
        _info(f"numeric failure: {err}")
        return 3
    except FloatingPointError as err:
        _info(f"numeric failure: {err}")
        return 3
    except (ConfigError, ValueError) as err:
        _info(f"error: {err}")
        return 2
    except OSError as err:
        _info(f"i/o error: {err}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
