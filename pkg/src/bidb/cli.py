"""Command-line driver: synth, train, embed, score, fuse, report, verify.

Every command writes a ``*.run.json`` manifest next to its outputs that
records the resolved settings and SHA-256 hashes of the inputs, and never
modifies its inputs. Exit codes: 0 success, 2 usage, 3 data/validation,
4 numeric/degenerate.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import re
import shutil
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, IngestionError, NumericError, UndefinedMetricError
from .experiments import training_set
from .metrics import (ALL_CONDITIONS, cmc, cmc_from_ranks, mated_ranks, rank_table, roc,
                      split_by_condition, write_cmc_csv, write_rank_table_csv, write_roc_csv)
from .nn import (AttributeHead, IdentityHead, TrainConfig, load_head, save_head,
                 train_attribute_head, train_identity_head)
from .scoring import ScoreMatrix, fuse, load_scores, save_scores, score_all
from .svgplot import Series, step_chart
from .synthgen import WorldConfig, generate_world, read_annotations, write_world
from .templates import build_gallery, embed_all, read_manifest

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("bidb")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SEED_ENV = "BIDB_SEED"


# -- configuration -----------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from None


def resolve_seed(flag, section: dict) -> int:
    """Flag, then config file, then ``$BIDB_SEED``, then 0."""
    if flag is not None:
        return flag
    if "seed" in section:
        seed = section["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("seed", f"expected an integer, got {seed!r}")
        return seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(SEED_ENV, f"expected an integer, got {env!r}") from None
    return 0


def train_config(section: dict, args) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for key, v in section.items():
        if key not in known:
            raise ConfigError(key, "unknown training setting")
        values[key] = v
    for key, flag in (("epochs", args.epochs), ("learning_rate", args.lr),
                      ("batch_size", args.batch_size)):
        if flag is not None:
            values[key] = flag
    values["seed"] = resolve_seed(args.seed, section)
    defaults = TrainConfig()
    for key, v in values.items():
        d = getattr(defaults, key)
        if isinstance(d, bool):
            ok = isinstance(v, bool)
        elif isinstance(d, int):
            ok = isinstance(v, int) and not isinstance(v, bool)
        else:
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        if not ok:
            raise ConfigError(key, f"expected {type(d).__name__}, got {v!r}")
        if isinstance(d, float):
            values[key] = float(v)
    return TrainConfig(**values).validate()


# -- provenance ----------------------------------------------------------------

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_hashes(paths) -> dict[str, str]:
    """SHA-256 of every input file; directories are walked in sorted order."""
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = file_hash(f)
        elif p.is_file():
            out[str(p)] = file_hash(p)
    return out


def write_run_manifest(path, command: str, config_path, seed, inputs, outputs, settings) -> None:
    manifest = {
        "command": command,
        "config": None if config_path is None else str(config_path),
        "seed": seed,
        "inputs": tree_hashes(inputs),
        "outputs": [str(o) for o in outputs],
        "settings": settings,
        "version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def manifest_inputs(path) -> list[Path]:
    """The manifest itself plus every feature file it references."""
    path = Path(path)
    with open(path, newline="") as fh:
        return [path] + [path.parent / row["feature_file"] for row in csv.DictReader(fh)]


def require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise IngestionError(f"input not found: {p}")
    return p


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg_file = load_config(args.config)
    section = dict(cfg_file.get("world", {}))
    section["seed"] = resolve_seed(args.seed, section)
    cfg = WorldConfig.from_mapping(section)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise DataError(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    world = generate_world(cfg)
    write_world(world, out)
    write_run_manifest(out / "synth.run.json", "synth", args.config, cfg.seed, [], [out],
                       {"world": cfg.to_mapping()})
    log.info("wrote world with %d training, %d gallery, %d probe media to %s",
             len(world.train_media), len(world.gallery_media), len(world.probe_media), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_file = load_config(args.config)
    cfg = train_config(cfg_file.get("train", {}), args)
    manifest = require_file(args.manifest)
    media = read_manifest(manifest)
    inputs = manifest_inputs(manifest)
    annotations = None
    if args.kind == "attribute":
        if args.annotations is None:
            raise ConfigError("annotations", "attribute training needs --annotations")
        inputs.append(require_file(args.annotations))
        annotations = read_annotations(args.annotations)
        missing = sorted({m.identity_id for m in media} - set(annotations))
        if missing:
            raise IngestionError(f"no annotations for identity {missing[0]}")
    x, labels, targets, media_ids = training_set(media, annotations, seed=cfg.seed)
    groups = media_ids if args.split_by == "media" else None
    if cfg.epochs == 0:
        log.warning("--epochs 0: writing the initialized head without training")
    if args.kind == "attribute":
        head, history = train_attribute_head(x, targets, cfg, labels=labels, groups=groups)
    else:
        init = None
        if args.init is not None:
            inputs.append(require_file(args.init))
            init = load_head(args.init)
            if not isinstance(init, AttributeHead):
                raise ConfigError("init", f"{args.init} does not hold an attribute head")
        head, history = train_identity_head(x, labels, cfg, init=init, groups=groups)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_head(out, head)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    with open(loss_csv, "w", newline="") as fh:
        cols = ["epoch", "train_loss", "val_loss"] + (["val_accuracy"] if history.val_accuracy
                                                      else [])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history.rows():
            w.writerow([row["epoch"]] + [format(row[c], ".17g") for c in cols[1:]])
    settings = {"kind": args.kind, "train": asdict(cfg), "split_by": args.split_by,
                "init": None if args.init is None else str(args.init)}
    write_run_manifest(Path(str(out) + ".run.json"), "train", args.config, cfg.seed, inputs,
                       [out, loss_csv], settings)
    return EXIT_OK


def _identity_head(path) -> IdentityHead:
    head = load_head(require_file(path))
    if not isinstance(head, IdentityHead):
        raise ConfigError("head", f"{path} does not hold an identity head")
    return head


def cmd_embed(args) -> int:
    manifest = require_file(args.manifest)
    head = _identity_head(args.head)
    media = read_manifest(manifest)
    if args.by_identity:
        templates = list(build_gallery(media, head).values())
    else:
        templates = embed_all(media, head)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dim = head.embed_dim
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["owner_id", "source_count"] + [f"e_{i}" for i in range(dim)])
        for t in templates:
            w.writerow([t.owner_id, t.source_count] + [format(v, ".17g") for v in t.vector])
    write_run_manifest(Path(str(out) + ".run.json"), "embed", None, None,
                       manifest_inputs(manifest) + [args.head], [out],
                       {"by_identity": args.by_identity})
    return EXIT_OK


def cmd_score(args) -> int:
    gman, pman = require_file(args.gallery), require_file(args.probe)
    head = _identity_head(args.head)
    gallery_media = read_manifest(gman)
    probe_media = read_manifest(pman)
    gallery = build_gallery(gallery_media, head)
    probes = embed_all(probe_media, head)
    mated = {m.media_id: m.identity_id for m in probe_media if m.identity_id in gallery}
    m = score_all(probes, gallery, mated, threads=args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scores(out, m)
    write_run_manifest(Path(str(out) + ".run.json"), "score", None, None,
                       manifest_inputs(gman) + manifest_inputs(pman) + [args.head], [out],
                       {"threads": args.threads})
    return EXIT_OK


def cmd_fuse(args) -> int:
    a = load_scores(require_file(args.a))
    b = load_scores(require_file(args.b))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scores(out, fuse(a, b))
    write_run_manifest(Path(str(out) + ".run.json"), "fuse", None, None, [args.a, args.b],
                       [out], {})
    return EXIT_OK


def read_condition_tags(path) -> dict[str, str]:
    """Probe id -> condition from a media manifest or a ``probe_id,condition`` CSV."""
    with open(require_file(path), newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        key = "media_id" if "media_id" in names else "probe_id" if "probe_id" in names else None
        if key is None or "condition" not in names:
            raise IngestionError(f"{path}: need media_id/probe_id and condition columns")
        return {row[key]: row["condition"] for row in reader}


def slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-") or "all"


def parse_models(specs) -> dict[str, Path]:
    models = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ConfigError("model", f"expected NAME=PATH, got {spec!r}")
        if name in models:
            raise ConfigError("model", f"model {name!r} given twice")
        models[name] = Path(path)
    return models


def write_report(out_dir, matrices: dict[str, ScoreMatrix], conditions: dict[str, str] | None,
                 decimals: int = 2) -> None:
    """Rank table CSV, per-model CMC/ROC CSVs and one SVG per condition and curve type."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables, cmcs, rocs = {}, {}, {}
    for name, m in matrices.items():
        groups = split_by_condition(m, conditions or {})
        tables[name] = rank_table(groups)
        cmcs[name] = {ALL_CONDITIONS: cmc_from_ranks(
            np.concatenate([mated_ranks(g) for g in groups.values()]), len(m.gallery_ids))}
        cmcs[name].update({c: cmc(g) for c, g in groups.items()})
        rocs[name] = {ALL_CONDITIONS: roc(m)}
        for c, g in groups.items():
            try:
                rocs[name][c] = roc(g)
            except UndefinedMetricError as exc:
                log.warning("%s/%s: ROC skipped (%s)", name, c, exc)
    write_rank_table_csv(out / "rank_table.csv", tables, decimals)
    conds = list(cmcs[next(iter(matrices))])
    for name in matrices:
        mdir = out / slug(name)
        mdir.mkdir(exist_ok=True)
        for c, curve in cmcs[name].items():
            write_cmc_csv(mdir / f"cmc_{slug(c)}.csv", curve)
        for c, curve in rocs[name].items():
            write_roc_csv(mdir / f"roc_{slug(c)}.csv", curve)
    for c in conds:
        series = [Series(n, cmcs[n][c].ranks.tolist(), cmcs[n][c].hit_rates.tolist())
                  for n in matrices if c in cmcs[n]]
        (out / f"cmc_{slug(c)}.svg").write_text(
            step_chart(series, "Rank", "Identification Rate", title=c))
        series = []
        for n in matrices:
            if c in rocs[n]:
                r = rocs[n][c]
                series.append(Series(n, r.far[::-1].tolist(), r.tar[::-1].tolist()))
        if series:
            (out / f"roc_{slug(c)}.svg").write_text(
                step_chart(series, "FAR", "TAR", title=c, xlim=(0.0, 1.0)))


def cmd_report(args) -> int:
    models = parse_models(args.model)
    matrices = {name: load_scores(require_file(p)) for name, p in models.items()}
    conditions = read_condition_tags(args.conditions) if args.conditions else None
    out = Path(args.out)
    write_report(out, matrices, conditions, args.decimals)
    inputs = list(models.values()) + ([args.conditions] if args.conditions else [])
    write_run_manifest(out / "report.run.json", "report", None, None, inputs, [out],
                       {"models": {k: str(v) for k, v in models.items()},
                        "decimals": args.decimals})
    return EXIT_OK


def verify_matrix(m: ScoreMatrix) -> list[tuple[str, bool, str]]:
    """Invariant checks on one score matrix: (name, passed, detail)."""
    out = []
    s = m.scores
    out.append(("scores finite and within [-1, 1]",
                bool(np.all(np.isfinite(s)) and np.all(np.abs(s) <= 1.0)), f"{s.shape}"))
    out.append(("self-fusion is the identity", fuse(m, m).equals(m), ""))
    if not m.mated:
        out.append(("has mated probes", False, "mated map is empty"))
        return out
    curve = cmc(m)
    h = curve.hit_rates
    out.append(("CMC non-decreasing", bool(np.all(np.diff(h) >= 0)), ""))
    out.append(("CMC reaches 1 at the gallery size", bool(h[-1] == 1.0), f"{float(h[-1])!r}"))
    try:
        r = roc(m)
    except UndefinedMetricError as exc:
        out.append(("ROC defined", False, str(exc)))
        return out
    mono = bool(np.all(np.diff(r.far) <= 0) and np.all(np.diff(r.tar) <= 0))
    out.append(("ROC monotone in the threshold", mono, ""))
    ends = r.far[0] == 1 and r.tar[0] == 1 and r.far[-1] == 0 and r.tar[-1] == 0
    out.append(("ROC endpoints (1,1) and (0,0)", bool(ends), ""))
    return out


def cmd_verify(args) -> int:
    m = load_scores(require_file(args.scores))
    results = verify_matrix(m)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_DATA


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bidb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic world")
    s.add_argument("--config", help="TOML file with a [world] table")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train an attribute or identity head")
    t.add_argument("kind", choices=("attribute", "identity"))
    t.add_argument("--manifest", required=True)
    t.add_argument("--annotations", help="annotations CSV (attribute heads)")
    t.add_argument("--init", help="attribute head whose encoder seeds the identity head")
    t.add_argument("--config", help="TOML file with a [train] table")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--split-by", choices=("frame", "media"), default="frame",
                   help="hold out individual frames (default) or whole media items")
    t.add_argument("--out", required=True, help="BIDH output path")
    t.add_argument("--loss-csv", help="loss curve path (default: <out>.loss.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="write media or identity templates as CSV")
    e.add_argument("--manifest", required=True)
    e.add_argument("--head", required=True)
    e.add_argument("--by-identity", action="store_true", help="average media per identity")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    c = sub.add_parser("score", help="cosine scores of probes against gallery identities")
    c.add_argument("--gallery", required=True, help="gallery media manifest")
    c.add_argument("--probe", required=True, help="probe media manifest")
    c.add_argument("--head", required=True)
    c.add_argument("--threads", type=int, default=1)
    c.add_argument("--out", required=True, help=".csv or BIDS output path")
    c.set_defaults(func=cmd_score)

    f = sub.add_parser("fuse", help="average two aligned score matrices")
    f.add_argument("a")
    f.add_argument("b")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    r = sub.add_parser("report", help="rank table, CMC/ROC CSVs and SVG plots")
    r.add_argument("--model", action="append", required=True, metavar="NAME=PATH")
    r.add_argument("--conditions", help="probe manifest or probe_id,condition CSV")
    r.add_argument("--decimals", type=int, default=2)
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="check protocol invariants on a score matrix")
    v.add_argument("scores")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("invalid setting %s", exc)
        return EXIT_DATA
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
