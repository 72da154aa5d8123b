"""Command-line entry point: ``affectrl {train,eval,make-coldstart,demo}``.

Lines meant for scripts start with ``RESULT:``. Failures print one line
``ERROR[<category>] <message>`` to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import demo_samples, read_samples, write_samples
from .emotion_wheel import EmotionWheel, cluster_of, default_wheel, dump_wheel, read_wheel
from .errors import AffectRLError, ConfigError, DataError, NonFiniteError
from .grpo_engine import TrainConfig, evaluate_greedy, train
from .ov_metric import LabelSet, batch_evaluate
from .rewards import check_format, extract_answer, format_cold_start_target
from .toy_policy import PolicyParams, Vocab, format_warm_start, load_checkpoint, save_checkpoint

REPORT_FORMATS = ("csv", "json", "both")
WARM_STARTS = ("none", "format")


@dataclass
class RunConfig:
    dataset_path: Path
    output_dir: Path
    wheel_path: Path | None = None
    init_checkpoint: Path | None = None
    warm_start: str = "none"
    checkpoint_every: int = 0
    report_format: str = "both"
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.report_format not in REPORT_FORMATS:
            raise ConfigError(f"report_format must be one of {REPORT_FORMATS}", "report_format")
        if self.warm_start not in WARM_STARTS:
            raise ConfigError(f"warm_start must be one of {WARM_STARTS}", "warm_start")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0", "checkpoint_every")
        if self.init_checkpoint is not None and self.warm_start != "none":
            raise ConfigError("init_checkpoint and warm_start are mutually exclusive", "warm_start")
        for name in ("dataset_path", "wheel_path", "init_checkpoint"):
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise ConfigError(f"{name} does not exist: {path}", name)
        if self.output_dir.exists() and not self.output_dir.is_dir():
            raise ConfigError(f"output_dir is not a directory: {self.output_dir}", "output_dir")
        self.train.validate()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["paths"] = {
            "dataset": _path_text(self.dataset_path),
            "wheel": _path_text(self.wheel_path),
            "output_dir": _path_text(self.output_dir),
            "init_checkpoint": _path_text(self.init_checkpoint),
        }
        cp["train"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self.train).items()}
        cp["run"] = {
            "warm_start": self.warm_start,
            "checkpoint_every": str(self.checkpoint_every),
            "report_format": self.report_format,
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _path_text(path: Path | None) -> str:
    return "" if path is None else str(path)


def _parse_value(section: str, key: str, raw: str, kind: type):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}", key) from None


def load_run_config(path: str | Path) -> RunConfig:
    """Parse an INI run config; relative paths resolve against the file's directory."""
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    unknown = set(cp.sections()) - {"paths", "train", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = path.parent

    def opt_path(key: str) -> Path | None:
        raw = cp.get("paths", key, fallback="").strip()
        return (base / raw) if raw else None

    dataset = opt_path("dataset")
    if dataset is None:
        raise ConfigError("[paths] dataset is required", "dataset")

    train_kinds = {f.name: f.type for f in fields(TrainConfig)}
    kind_map = {"int": int, "float": float}
    train_kwargs = {}
    if cp.has_section("train"):
        for key, raw in cp.items("train"):
            if key not in train_kinds:
                raise ConfigError(f"unknown [train] key {key!r}", key)
            train_kwargs[key] = _parse_value("train", key, raw, kind_map[train_kinds[key]])
    run_kwargs = {}
    if cp.has_section("run"):
        for key, raw in cp.items("run"):
            if key == "checkpoint_every":
                run_kwargs[key] = _parse_value("run", key, raw, int)
            elif key in ("report_format", "warm_start"):
                run_kwargs[key] = raw.strip()
            else:
                raise ConfigError(f"unknown [run] key {key!r}", key)
    for key in cp["paths"] if cp.has_section("paths") else ():
        if key not in ("dataset", "wheel", "output_dir", "init_checkpoint"):
            raise ConfigError(f"unknown [paths] key {key!r}", key)

    cfg = RunConfig(
        dataset_path=dataset,
        output_dir=opt_path("output_dir") or base / "run",
        wheel_path=opt_path("wheel"),
        init_checkpoint=opt_path("init_checkpoint"),
        train=TrainConfig(**train_kwargs),
        **run_kwargs,
    )
    cfg.validate()
    return cfg


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _save_checkpoint(params: PolicyParams, vocab: Vocab, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    save_checkpoint(params, vocab, tmp)
    os.replace(tmp, path)


def _load_wheel(path: Path | None) -> EmotionWheel:
    return default_wheel() if path is None else read_wheel(path)


def _write_trace(trace, out: Path, report_format: str) -> None:
    if report_format in ("csv", "both"):
        _atomic_write(out / "trace.csv", trace.to_csv())
    if report_format in ("json", "both"):
        _atomic_write(out / "trace.json", trace.to_json())


def cmd_train(config_path: str | Path, seed: int | None = None, out: str | Path | None = None) -> int:
    cfg = load_run_config(config_path)
    if seed is not None:
        cfg.train.seed = seed
    if out is not None:
        cfg.output_dir = Path(out)
    wheel = _load_wheel(cfg.wheel_path)
    samples = read_samples(cfg.dataset_path)
    vocab = Vocab.from_wheel(wheel)
    num_contexts = max(s.context for s in samples) + 1

    init = None
    if cfg.init_checkpoint is not None:
        init, ck_vocab = load_checkpoint(cfg.init_checkpoint)
        if ck_vocab != vocab:
            raise DataError(f"checkpoint vocabulary does not match wheel: {cfg.init_checkpoint}")
    elif cfg.warm_start == "format":
        init = format_warm_start(num_contexts, wheel, vocab, seed=cfg.train.seed, max_len=cfg.train.max_len)

    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    echoed = RunConfig(**{**vars(cfg), "train": cfg.train})
    for name in ("dataset_path", "wheel_path", "init_checkpoint", "output_dir"):
        path = getattr(echoed, name)
        if path is not None:
            setattr(echoed, name, path.resolve())
    _atomic_write(outdir / "config.ini", echoed.to_ini())

    def on_iteration(it: int, params: PolicyParams, _trace) -> None:
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            _save_checkpoint(params, vocab, outdir / "checkpoints" / f"iter_{it + 1:06d}.json")

    try:
        params, trace = train(samples, wheel, cfg.train, init, vocab, on_iteration)
    except NonFiniteError as exc:
        _write_trace(exc.trace, outdir, cfg.report_format)
        raise

    _write_trace(trace, outdir, cfg.report_format)
    _save_checkpoint(params, vocab, outdir / "checkpoint_final.json")
    greedy = evaluate_greedy(params, samples, wheel, vocab)
    last = trace.records[-1] if trace.records else None
    summary = {
        "iterations": len(trace.records),
        "final_mean_reward": last.mean_reward if last else None,
        "final_format_rate": last.format_rate if last else None,
        "greedy_mean_accuracy": sum(g.accuracy for g in greedy) / len(greedy),
        "greedy_format_rate": sum(g.well_formed for g in greedy) / len(greedy),
        "greedy": [
            {"id": s.id, "context": g.context, "output": g.text, "well_formed": g.well_formed, "accuracy": g.accuracy}
            for s, g in zip(samples, greedy)
        ],
    }
    _atomic_write(outdir / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"RESULT: iterations {summary['iterations']}")
    if last:
        print(f"RESULT: final_mean_reward {last.mean_reward:.4f}")
    print(f"RESULT: greedy_accuracy {summary['greedy_mean_accuracy']:.4f}")
    print(f"RESULT: greedy_format_rate {summary['greedy_format_rate']:.4f}")
    return 0


def cmd_eval(
    predictions_path: str | Path,
    references_path: str | Path,
    wheel_path: str | Path | None = None,
    out: str | Path = "ew_report.json",
    workers: int = 1,
) -> int:
    wheel = _load_wheel(Path(wheel_path) if wheel_path else None)
    report = batch_evaluate(predictions_path, references_path, wheel, workers=workers)
    _atomic_write(Path(out), report.to_json())
    print(f"RESULT: score {report.aggregate.score:.4f}")
    return 0


def cmd_make_coldstart(
    descriptions_path: str | Path,
    out_path: str | Path,
    wheel_path: str | Path | None = None,
) -> int:
    """Convert ``{"id", "description", "labels"}`` rows to ``{"id", "target"}`` rows.

    With a wheel, every label must resolve to a cluster. Nothing is written
    unless every row converts.
    """
    wheel = read_wheel(wheel_path) if wheel_path else None
    lines = []
    with open(descriptions_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON ({exc.msg})", line=line_no) from exc
            sid = obj.get("id") if isinstance(obj, dict) else None
            if not isinstance(sid, str):
                raise DataError("missing string 'id'", line=line_no)
            desc, raw_labels = obj.get("description"), obj.get("labels")
            if not isinstance(desc, str):
                raise DataError("'description' must be a string", line_no, sid)
            if not isinstance(raw_labels, list) or not all(isinstance(x, str) for x in raw_labels):
                raise DataError("'labels' must be a list of strings", line_no, sid)
            labels = LabelSet(raw_labels)
            if not labels:
                raise DataError("row has no labels", line_no, sid)
            if wheel is not None:
                unknown = [lab for lab in labels if cluster_of(wheel, lab) is None]
                if unknown:
                    raise DataError(f"labels not in wheel: {unknown}", line_no, sid)
            try:
                target = format_cold_start_target(desc, labels)
            except AffectRLError as exc:
                raise DataError(str(exc), line_no, sid) from exc
            parsed = check_format(target)
            if not parsed.well_formed or extract_answer(parsed) != labels:
                raise DataError("target does not round-trip through the format check", line_no, sid)
            lines.append(json.dumps({"id": sid, "target": target}, ensure_ascii=False))
    _atomic_write(Path(out_path), "".join(line + "\n" for line in lines))
    print(f"RESULT: rows {len(lines)}")
    return 0


def cmd_demo(out: str | Path, seed: int | None = None, warm_start: str = "none") -> int:
    """Write the bundled synthetic task: wheel, 4-context dataset and a run config."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "wheel.json", dump_wheel(default_wheel()))
    write_samples(demo_samples(), out / "dataset.jsonl")
    train_cfg = TrainConfig() if seed is None else TrainConfig(seed=seed)
    cfg = RunConfig(
        dataset_path=Path("dataset.jsonl"),
        output_dir=Path("run"),
        wheel_path=Path("wheel.json"),
        warm_start=warm_start,
        checkpoint_every=100,
        train=train_cfg,
    )
    _atomic_write(out / "config.ini", cfg.to_ini())
    print(f"RESULT: config {out / 'config.ini'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affectrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run GRPO training from a config file")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None, help="override [train] seed")
    p.add_argument("--out", type=Path, default=None, help="override [paths] output_dir")

    p = sub.add_parser("eval", help="score predictions against references with the emotion wheel")
    p.add_argument("--predictions", required=True, type=Path)
    p.add_argument("--references", required=True, type=Path)
    p.add_argument("--wheel", type=Path, default=None, help="taxonomy JSON (default: bundled wheel)")
    p.add_argument("--out", type=Path, default=Path("ew_report.json"))
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("make-coldstart", help="render description+labels rows as template targets")
    p.add_argument("--descriptions", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--wheel", type=Path, default=None, help="reject labels outside this wheel")

    p = sub.add_parser("demo", help="write the bundled synthetic task")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--warm-start", choices=WARM_STARTS, default="none")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.seed, args.out)
        if args.command == "eval":
            return cmd_eval(args.predictions, args.references, args.wheel, args.out, args.workers)
        if args.command == "make-coldstart":
            return cmd_make_coldstart(args.descriptions, args.out, args.wheel)
        return cmd_demo(args.out, args.seed, args.warm_start)
    except AffectRLError as exc:
        msg = " ".join(str(exc).split())
        print(f"ERROR[{exc.category}] {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR[io] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
