"""Command-line entry point: ``mdi <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data validation failure,
3 numeric failure. Settings resolve as defaults < ``--config`` file < flags.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from collections import Counter
from dataclasses import fields
from pathlib import Path

from . import corpus as C
from . import evalkit as E
from . import semisup as S
from . import splits as SP
from .models import bigru as B
from .models.checkpoint import Checkpoint, CheckpointError, model_from_checkpoint
from .models.distill import distill
from .models.encoder import EncoderConfig, TinyEncoder
from .models.mlm import pretrain_mlm
from .models.training import TrainConfig, finetune, label_sets, make_examples, predict, record_tokens
from .models.vocab import Vocab
from .nncore.gradcheck import NonFiniteLoss
from .nncore.rng import RngStreams
from .nncore.tensor import set_mode

log = logging.getLogger("microdialect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TRAIN_ARCHS = ("single", "mtl-common", "mtl-spec", "hamtl-city", "hamtl-country", "encoder")
AUX_TASKS = ("diagloss", "codesw")
REGIME_NAMES = {"weak": "weak", "weak+gold": "weak_plus_gold", "weak-then-gold": "weak_then_gold"}
# hyperparameter name -> a default of the right type, for coercion
HYPER_TYPES = {f.name: f.default for cls in (EncoderConfig, B.HaMtlConfig) for f in fields(cls)
               if f.name != "vocab_size"}
HYPER_KEYS = set(HYPER_TYPES)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value, like):
    if not isinstance(value, str) or like is None:
        return value
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise UsageError(f"expected a number, got {value!r}") from None
    return value


class Run:
    """Effective settings, input digests and outputs of one command."""

    def __init__(self, command: str, settings: dict, hyper: dict, seed: int):
        self.command = command
        self.settings = settings
        self.hyper = hyper
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.outputs: list[dict] = []
        self.metrics: dict = {}
        self.started = time.perf_counter()

    def add_input(self, role: str, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"{role}: {p} does not exist")
        self.inputs[role] = file_digest(p)
        return p

    def snapshot(self) -> dict:
        """Path-free config record embedded into every artifact."""
        settings = {k: v for k, v in self.settings.items() if k not in PATH_KEYS}
        return {"command": self.command, "seed": self.seed, "settings": settings,
                "hyper": dict(sorted(self.hyper.items())), "inputs": dict(sorted(self.inputs.items()))}

    def add_output(self, path) -> None:
        self.outputs.append({"path": str(path), "sha256": file_digest(path)})

    def manifest(self) -> dict:
        return {"config": self.snapshot(), "outputs": self.outputs, "metrics": self.metrics,
                "wall_clock_s": round(time.perf_counter() - self.started, 3)}


PATH_KEYS = {"input", "out", "train", "dev", "teacher", "pool", "ckpt", "auto", "gold", "classifier",
             "geo", "manifest", "predictions", "init", "exclude", "gazetteer", "a", "b", "report",
             "run_manifest"}

# per-command defaults; None means "not set"
DEFAULTS = {
    "synth": dict(out=None, markers_per_city=5, users_train=8, users_dev=1, users_test=2,
                  tweets_per_user=25, noise=0.05, msa_rate=0.0),
    "preprocess": dict(input=None, out=None, min_arabic_words=3),
    "label": dict(kind=None, input=None, out=None, min_diacritics=5),
    "split": dict(kind=None, input=None, out=None, setting=None, run="A", ratios="0.8,0.1,0.1",
                  cap=0, level="city"),
    "train": dict(arch=None, train=None, dev=None, out=None, task="city", aux="", init=None,
                  manifest=None, vocab_min_freq=2, epochs=0, patience=0, batch_size=0, lr=0.0),
    "pretrain-mlm": dict(input=None, out=None, vocab_min_freq=2, epochs=0, batch_size=0, lr=0.0),
    "distill": dict(teacher=None, pool=None, out=None, student="hamtl", epochs=20, batch_size=0,
                    lr=0.0, report=None),
    "selftrain": dict(ckpt=None, pool=None, out=None, mode="agnostic", pct=10, task="", tau=-1.0,
                      exclude="", gazetteer=None, min_words=0, replies_only=False,
                      no_diacritics=False),
    "regime": dict(kind=None, auto=None, gold=None, dev=None, out=None, arch="single",
                   task="country", vocab_min_freq=2, epochs=15, epochs2=15, patience=0,
                   batch_size=0, lr=0.0),
    "msa-filter": dict(classifier=None, input=None, out=None, level="country"),
    "eval": dict(ckpt=None, predictions=None, input=None, level="city", user_level=False,
                 tau=0.35, geo=None, out=None, manifest=None, split="test"),
    "kappa": dict(a=None, b=None),
    "attn-dump": dict(ckpt=None, input=None, out=None),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mdi", description="Micro-dialect identification toolkit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a setting or model hyperparameter")
    p.add_argument("--json", action="store_true", help="machine-readable stdout")
    p.add_argument("--numeric", choices=("run", "test"), default="run",
                   help="32-bit run mode or 64-bit test mode")
    p.add_argument("--run-manifest", help="write a run manifest here")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_):
        return sub.add_parser(name, help=help_, argument_default=None)

    s = cmd("synth", "generate a synthetic city/state/country corpus")
    s.add_argument("--out", help="output directory")
    for k in ("markers-per-city", "users-train", "users-dev", "users-test", "tweets-per-user"):
        s.add_argument(f"--{k}", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--msa-rate", type=float)

    s = cmd("preprocess", "normalize and filter a corpus")
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--min-arabic-words", type=int)

    s = cmd("label", "attach proxy labels")
    s.add_argument("kind", choices=AUX_TASKS)
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--min-diacritics", type=int)

    s = cmd("split", "write a split manifest")
    s.add_argument("kind", choices=("random", "disjoint"))
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--setting", choices=sorted(SP.SETTINGS))
    s.add_argument("--run", choices=sorted(SP.RUN_OFFSETS))
    s.add_argument("--ratios")
    s.add_argument("--cap", type=int)
    s.add_argument("--level", choices=B.GEO_TASKS)

    s = cmd("train", "train a classifier checkpoint")
    s.add_argument("--arch", choices=TRAIN_ARCHS)
    s.add_argument("--train")
    s.add_argument("--dev")
    s.add_argument("--out")
    s.add_argument("--task")
    s.add_argument("--aux", help="comma list of auxiliary tasks")
    s.add_argument("--init", help="pretrained encoder checkpoint")
    s.add_argument("--manifest", help="split manifest selecting TRAIN/DEV ids")
    s.add_argument("--vocab-min-freq", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)

    s = cmd("pretrain-mlm", "masked-LM pretraining of the tiny encoder")
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--vocab-min-freq", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)

    s = cmd("distill", "distill a teacher into an HA-MTL student")
    s.add_argument("--teacher")
    s.add_argument("--pool")
    s.add_argument("--out")
    s.add_argument("--student", choices=("hamtl",))
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--report")

    s = cmd("selftrain", "select pseudo-labels from a model's predictions")
    s.add_argument("--ckpt")
    s.add_argument("--pool")
    s.add_argument("--out")
    s.add_argument("--mode", choices=("agnostic", "specific"))
    s.add_argument("--pct", type=int)
    s.add_argument("--task")
    s.add_argument("--tau", type=float, help="use the confidence-threshold variant")
    s.add_argument("--exclude", help="comma list of JSONL files whose ids are never selected")
    s.add_argument("--gazetteer")
    s.add_argument("--min-words", type=int)
    s.add_argument("--replies-only", action="store_const", const=True)
    s.add_argument("--no-diacritics", action="store_const", const=True)

    s = cmd("regime", "train under a noisy-label regime")
    s.add_argument("kind", choices=sorted(REGIME_NAMES))
    s.add_argument("--auto")
    s.add_argument("--gold")
    s.add_argument("--dev")
    s.add_argument("--out")
    s.add_argument("--arch", choices=TRAIN_ARCHS)
    s.add_argument("--task")
    s.add_argument("--vocab-min-freq", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--epochs2", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)

    s = cmd("msa-filter", "drop records an MSA-vs-dialect classifier calls MSA")
    s.add_argument("--classifier")
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--level", choices=B.GEO_TASKS)

    s = cmd("eval", "score predictions or a checkpoint")
    s.add_argument("--ckpt")
    s.add_argument("--predictions", help="JSONL rows {id, label[, confidence]}")
    s.add_argument("--input")
    s.add_argument("--level", choices=B.GEO_TASKS)
    s.add_argument("--user-level", action="store_const", const=True)
    s.add_argument("--tau", type=float)
    s.add_argument("--geo", help="gazetteer TSV for distance metrics")
    s.add_argument("--out")
    s.add_argument("--manifest")
    s.add_argument("--split", choices=SP.SPLITS)

    s = cmd("kappa", "Cohen's kappa between two label files")
    s.add_argument("a")
    s.add_argument("b")

    s = cmd("attn-dump", "per-token attention weights as JSONL")
    s.add_argument("--ckpt")
    s.add_argument("--input")
    s.add_argument("--out")
    return p


def resolve(args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge command defaults, the config file and explicit flags."""
    defaults = DEFAULTS[args.command]
    settings = dict(defaults)
    hyper: dict = {}
    layered = read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        layered[k.strip().replace("-", "_")] = v.strip()
    known_elsewhere = set().union(*DEFAULTS.values())
    for k, v in layered.items():
        if k in defaults:
            settings[k] = _coerce(v, defaults[k])
        elif k in HYPER_KEYS:
            hyper[k] = _coerce(v, HYPER_TYPES[k])
        elif k not in known_elsewhere and k != "seed":
            raise UsageError(f"unknown setting {k!r}")
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings, hyper


def _require(settings: dict, *keys) -> None:
    missing = [k for k in keys if not settings.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                                   for k in missing))


def _apply_hyper(config, hyper: dict):
    for k, v in hyper.items():
        if hasattr(config, k):
            setattr(config, k, _coerce(v, getattr(config, k)))
    return config


def _emit(obj, as_json: bool) -> None:
    if as_json:
        sys.stdout.write(E.dumps_report(obj))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            print(f"{k}: {v}")
    else:
        print(obj)


def _select(records, manifest_path, split, run: Run):
    if not manifest_path:
        return records
    run.add_input("manifest", manifest_path)
    res = SP.SplitResult.from_manifest(json.loads(Path(manifest_path).read_text(encoding="utf-8")))
    return res.select(records, split)


# model construction shared by train and regime

def build_model(arch: str, vocab: Vocab, tasks: dict, main_task: str, hyper: dict, seed: int,
                init: Checkpoint | None = None):
    rng = RngStreams(seed).stream("init")
    if arch == "encoder":
        if init is not None:
            base = model_from_checkpoint(init)
            if not isinstance(base, TinyEncoder):
                raise CheckpointError("--init must be an encoder checkpoint")
            _apply_hyper(base.config, {k: v for k, v in hyper.items()
                                       if k in ("lr", "epochs", "patience", "batch_size", "dropout")})
            for t in list(base.tasks):
                del base.tasks[t], base.heads[t]
            base.main_task = None
            for t, labels in tasks.items():
                base.add_task(t, labels, rng)
            base.main_task = main_task
            return base
        cfg = _apply_hyper(EncoderConfig(vocab_size=len(vocab)), hyper)
        return TinyEncoder(cfg, tasks, rng, main_task=main_task)
    if arch.startswith("hamtl"):
        cfg = _apply_hyper(B.HaMtlConfig(vocab_size=len(vocab)), hyper)
        cfg.order = "city_first" if arch == "hamtl-city" else "country_first"
        return B.BiGRUNet("hamtl", cfg, tasks, rng, main_task=main_task)
    cfg = _apply_hyper(B.BiGRUConfig(vocab_size=len(vocab)), hyper)
    return B.BiGRUNet(arch, cfg, tasks, rng, main_task=main_task)


def _task_names(arch: str, task: str, aux: str) -> list[str]:
    extra = [a for a in (aux.split(",") if aux else []) if a]
    for a in extra:
        if a not in AUX_TASKS:
            raise UsageError(f"unknown auxiliary task {a!r}")
    if arch == "single" or (arch == "encoder" and task not in B.GEO_TASKS):
        return [task, *extra]
    return [*B.GEO_TASKS, *extra]


def _train_config(model, settings: dict, seed: int, main_task: str, epochs=None) -> TrainConfig:
    return TrainConfig.for_model(model, epochs=epochs or settings.get("epochs") or None,
                                 patience=settings.get("patience") or None,
                                 batch_size=settings.get("batch_size") or None,
                                 lr=settings.get("lr") or None, seed=seed, main_task=main_task)


# commands

def cmd_synth(st, run: Run):
    from .synthetic import make_corpus

    _require(st, "out")
    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    kw = {k: st[k] for k in ("markers_per_city", "users_train", "users_dev", "users_test",
                             "tweets_per_user", "noise", "msa_rate")}
    syn = make_corpus(seed=run.seed, **kw)
    for name, recs in (("train", syn.train), ("dev", syn.dev), ("test", syn.test)):
        C.write_jsonl(out / f"{name}.jsonl", recs)
        run.add_output(out / f"{name}.jsonl")
    syn.gazetteer.to_tsv(out / "gazetteer.tsv")
    run.add_output(out / "gazetteer.tsv")
    return {"train": len(syn.train), "dev": len(syn.dev), "test": len(syn.test),
            "cities": len(syn.cities)}


def cmd_preprocess(st, run: Run):
    records = C.read_jsonl(run.add_input("input", st["input"]))
    kept = C.preprocess(records, st["min_arabic_words"])
    C.write_jsonl(st["out"], kept)
    run.add_output(st["out"])
    return {"read": len(records), "kept": len(kept)}


def cmd_label(st, run: Run):
    records = C.read_jsonl(run.add_input("input", st["input"]))
    if st["kind"] == "diagloss":
        out = C.build_diagloss(records, st["min_diacritics"])
    else:
        out = C.extract_codesw(records)
    C.write_jsonl(st["out"], out)
    run.add_output(st["out"])
    return {"read": len(records), "labeled": len(out),
            "classes": dict(sorted(Counter(r.label(st["kind"]) for r in out).items()))}


def cmd_split(st, run: Run):
    records = C.read_jsonl(run.add_input("input", st["input"]))
    try:
        ratios = tuple(float(x) for x in st["ratios"].split(","))
    except ValueError:
        raise UsageError(f"bad --ratios {st['ratios']!r}") from None
    if st["kind"] == "disjoint":
        _require(st, "setting")
        spec = SP.SplitSpec("user_disjoint", setting=st["setting"], run_id=st["run"],
                            seed=run.seed, level=st["level"])
    else:
        spec = SP.SplitSpec("tweet_random", ratios=ratios, run_id=st["run"], seed=run.seed,
                            per_class_cap=st["cap"] or None, level=st["level"])
    res = SP.split_records(records, spec)
    report = SP.verify_disjoint(res)
    manifest = res.manifest()
    manifest["disjoint"] = bool(report)
    manifest["config"] = run.snapshot()
    Path(st["out"]).write_text(json.dumps(manifest, indent=1, sort_keys=True, ensure_ascii=False)
                               + "\n", encoding="utf-8")
    run.add_output(st["out"])
    return {"sizes": list(res.sizes()), "disjoint": bool(report)}


def _load_train_dev(st, run: Run):
    train = C.read_jsonl(run.add_input("train", st["train"]))
    dev = C.read_jsonl(run.add_input("dev", st["dev"])) if st.get("dev") else []
    if st.get("manifest"):
        seen = {r.id for r in train}
        pool = train + [r for r in dev if r.id not in seen]
        train = _select(pool, st["manifest"], "train", run)
        dev = _select(pool, st["manifest"], "dev", run)
    return train, dev


def cmd_train(st, run: Run):
    _require(st, "arch", "train", "out")
    train, dev = _load_train_dev(st, run)
    names = _task_names(st["arch"], st["task"], st["aux"])
    tasks = label_sets([*train, *dev], names)
    empty = [t for t, labels in tasks.items() if not labels]
    if empty:
        raise ValueError(f"no labels in the data for task(s) {empty}")
    init = Checkpoint.load(run.add_input("init", st["init"])) if st.get("init") else None
    if init is not None and st["arch"] != "encoder":
        raise UsageError("--init applies only to --arch encoder")
    vocab = init.vocab if init is not None else Vocab.build(
        (record_tokens(r) for r in train), st["vocab_min_freq"])
    model = build_model(st["arch"], vocab, tasks, st["task"], run.hyper, run.seed, init)
    max_len = model.config.max_seq_len
    if st["arch"] == "encoder":
        max_len = min(max_len, model.config.finetune_max_seq_len)
    cfg = _train_config(model, st, run.seed, st["task"])
    ck = finetune(model, vocab, make_examples(train, vocab, tasks, max_len),
                  make_examples(dev, vocab, tasks, max_len), cfg)
    ck.metadata["run"] = run.snapshot()
    ck.save(st["out"])
    run.add_output(st["out"])
    return {"best_epoch": ck.metadata["best_epoch"], "dev_metric": ck.metadata["dev_metric"],
            "epochs_run": ck.metadata["epochs_run"], "params": model.param_count()}


def cmd_pretrain_mlm(st, run: Run):
    records = C.read_jsonl(run.add_input("input", st["input"]))
    token_lists = [record_tokens(r) for r in records]
    vocab = Vocab.build(token_lists, st["vocab_min_freq"])
    cfg = _apply_hyper(EncoderConfig(vocab_size=len(vocab)), run.hyper)
    model = TinyEncoder(cfg, None, RngStreams(run.seed).stream("init"))
    seqs = [vocab.encode(t, cfg.max_seq_len) for t in token_lists]
    ck = pretrain_mlm(model, vocab, seqs, seed=run.seed, epochs=st["epochs"] or None,
                      batch_size=st["batch_size"] or None, lr=st["lr"] or None)
    ck.metadata["run"] = run.snapshot()
    ck.save(st["out"])
    run.add_output(st["out"])
    hist = ck.metadata["history"]
    return {"epochs": len(hist), "first_masked_ce": hist[0]["masked_ce"],
            "final_masked_ce": hist[-1]["masked_ce"], "vocab": len(vocab)}


def cmd_distill(st, run: Run):
    _require(st, "teacher", "pool", "out")
    teacher = Checkpoint.load(run.add_input("teacher", st["teacher"]))
    pool = C.read_jsonl(run.add_input("pool", st["pool"]))
    student_cfg = _apply_hyper(B.HaMtlConfig(vocab_size=1), run.hyper)
    ck, rep = distill(teacher, student_cfg, pool, seed=run.seed, epochs=st["epochs"],
                      batch_size=st["batch_size"] or None, lr=st["lr"] or None)
    ck.metadata["run"] = run.snapshot()
    ck.save(st["out"])
    run.add_output(st["out"])
    summary = {"initial_mse": rep.initial_mse, "final_mse": rep.final_mse,
               "mse_ratio": rep.final_mse / rep.initial_mse if rep.initial_mse else None,
               "agreement": rep.agreement, "agreement_per_task": rep.agreement_per_task,
               "teacher_params": rep.teacher_params, "student_params": rep.student_params,
               "param_ratio": rep.param_ratio}
    if st.get("report"):
        Path(st["report"]).write_text(E.dumps_report({**summary, "config": run.snapshot()}),
                                      encoding="utf-8")
        run.add_output(st["report"])
    return {**summary, "throughput_ratio": rep.throughput_ratio}


def cmd_selftrain(st, run: Run):
    _require(st, "ckpt", "pool", "out")
    ck = Checkpoint.load(run.add_input("ckpt", st["ckpt"]))
    pool = C.read_jsonl(run.add_input("pool", st["pool"]))
    pool = S.pool_filter(pool, st["min_words"] or None, st["replies_only"], st["no_diacritics"])
    banned = set()
    for i, path in enumerate(p for p in st["exclude"].split(",") if p):
        banned.update(r.id for r in C.read_jsonl(run.add_input(f"exclude{i}", path)))
    pool = [r for r in pool if r.id not in banned]
    task = st["task"] or ck.config["main_task"]
    if task not in ck.config["tasks"]:
        raise ValueError(f"checkpoint has no {task!r} head")
    labels = ck.config["tasks"][task]
    items = S.pool_from_predictions(predict(ck, pool), task, labels)
    if st["tau"] >= 0:
        chosen = S.threshold_select(items, st["tau"])
    else:
        chosen = S.self_train_select(items, st["mode"], st["pct"])
    hierarchy = None
    if task == "city" and st.get("gazetteer"):
        hierarchy = C.Gazetteer.from_tsv(run.add_input("gazetteer", st["gazetteer"])).hierarchy()
    rows = S.pseudo_label_rows(chosen, task, hierarchy)
    S.write_pseudo_labels(st["out"], rows)
    run.add_output(st["out"])
    return {"pool": len(items), "selected": len(rows),
            "per_class": dict(sorted(Counter(p.label for p in chosen).items()))}


def cmd_regime(st, run: Run):
    _require(st, "auto", "out")
    auto = C.read_jsonl(run.add_input("auto", st["auto"]))
    gold = C.read_jsonl(run.add_input("gold", st["gold"])) if st.get("gold") else []
    dev = C.read_jsonl(run.add_input("dev", st["dev"])) if st.get("dev") else []
    regime = REGIME_NAMES[st["kind"]]
    names = _task_names(st["arch"], st["task"], "")
    tasks = label_sets([*auto, *gold, *dev], names)
    vocab = Vocab.build((record_tokens(r) for r in [*auto, *gold]), st["vocab_min_freq"])
    builder = lambda: build_model(st["arch"], vocab, tasks, st["task"], run.hyper, run.seed)  # noqa: E731
    probe = builder()
    spec = S.RegimeSpec(regime, seed=run.seed, epochs=(st["epochs"], st["epochs2"]))
    res = S.run_regime(spec, auto, gold, builder, vocab, st["task"], dev,
                       _train_config(probe, st, run.seed, st["task"]))
    res.checkpoint.metadata["run"] = run.snapshot()
    res.checkpoint.save(st["out"])
    run.add_output(st["out"])
    return {"regime": regime, "phases": res.log}


def cmd_msa_filter(st, run: Run):
    _require(st, "classifier")
    ck = Checkpoint.load(run.add_input("classifier", st["classifier"]))
    records = C.read_jsonl(run.add_input("input", st["input"]))
    rep = S.msa_filter(records, ck, st["level"])
    C.write_jsonl(st["out"], rep.retained)
    run.add_output(st["out"])
    return {"read": len(records), "retained": len(rep.retained), "per_class": rep.counts}


def _read_predictions(path) -> dict[str, tuple[str, float]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "id" not in row or "label" not in row:
                raise ValueError(f"{path}:{n}: prediction rows need id and label")
            out[str(row["id"])] = (str(row["label"]), float(row.get("confidence", 1.0)))
    return out


def cmd_eval(st, run: Run):
    _require(st, "input")
    if bool(st.get("ckpt")) == bool(st.get("predictions")):
        raise UsageError("give exactly one of --ckpt or --predictions")
    records = C.read_jsonl(run.add_input("input", st["input"]))
    records = _select(records, st.get("manifest"), st["split"], run)
    level = st["level"]
    records = [r for r in records if r.label(level) is not None]
    if not records:
        raise ValueError(f"no records carry a {level} label")
    hierarchy = C.Hierarchy.from_records(records) if all(r.labels for r in records) else None
    gaz = C.Gazetteer.from_tsv(run.add_input("geo", st["geo"])) if st.get("geo") else None
    if gaz is not None:
        hierarchy = gaz.hierarchy()
    label_set = None
    city_preds = None
    if st.get("ckpt"):
        ck = Checkpoint.load(run.add_input("ckpt", st["ckpt"]))
        preds = predict(ck, records)
        heads = ck.config["tasks"]
        if level in heads:
            label_set = heads[level]
            pairs = [p.label(level, label_set) for p in preds]
        elif "city" in heads and level in B.GEO_TASKS and hierarchy is not None:
            pairs = [(hierarchy.project(lab, level), conf)
                     for lab, conf in (p.label("city", heads["city"]) for p in preds)]
        else:
            raise ValueError(f"checkpoint has no {level!r} head")
        if "city" in heads:
            city_preds = [p.label("city", heads["city"])[0] for p in preds]
    else:
        table = _read_predictions(run.add_input("predictions", st["predictions"]))
        missing = [r.id for r in records if r.id not in table]
        if missing:
            raise ValueError(f"no prediction for {len(missing)} record(s), e.g. {missing[0]}")
        pairs = [table[r.id] for r in records]
        if level == "city":
            city_preds = [lab for lab, _ in pairs]
    gold = [r.label(level) for r in records]
    pred = [lab for lab, _ in pairs]
    if st["user_level"]:
        by_user: dict[str, list] = {}
        gold_user: dict[str, Counter] = {}
        for rec, pair in zip(records, pairs):
            by_user.setdefault(rec.user_id, []).append(pair)
            gold_user.setdefault(rec.user_id, Counter())[rec.label(level)] += 1
        agg = E.user_level_aggregate(by_user, E.AggregationSpec(st["tau"]))
        users = sorted(agg)
        gold = [min(gold_user[u], key=lambda c: (-gold_user[u][c], c)) for u in users]
        pred = [agg[u] for u in users]
    if label_set is None:
        label_set = sorted(set(gold) | set(pred))
    else:
        label_set = sorted(set(label_set) | set(gold))
    geo = None
    if gaz is not None and level == "city":
        geo = E.geo_metrics(pred, gold, gaz)
    report = E.metrics_report(level, gold, pred, label_set, geo, seed=run.seed)
    report["user_level"] = bool(st["user_level"])
    if city_preds is not None and hierarchy is not None and not st["user_level"]:
        report["projected"] = E.projected_accuracies([r.label("city") for r in records],
                                                     city_preds, hierarchy)
    report["config"] = run.snapshot()
    if st.get("out"):
        Path(st["out"]).write_text(E.dumps_report(report), encoding="utf-8")
        run.add_output(st["out"])
    run.metrics = {k: report[k] for k in ("accuracy", "macro_f1", "n")}
    return report


def _read_labels(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_kappa(st, run: Run):
    a = _read_labels(run.add_input("a", st["a"]))
    b = _read_labels(run.add_input("b", st["b"]))
    return {"kappa": E.cohen_kappa(a, b), "n": len(a)}


def cmd_attn_dump(st, run: Run):
    _require(st, "ckpt", "input", "out")
    ck = Checkpoint.load(run.add_input("ckpt", st["ckpt"]))
    records = C.read_jsonl(run.add_input("input", st["input"]))
    preds = predict(ck, records)
    with open(st["out"], "w", encoding="utf-8") as fh:
        for p in preds:
            row = {"id": p.rid, "tokens": p.tokens,
                   "attention": {s: [round(float(x), 6) for x in w[:len(p.tokens)]]
                                 for s, w in sorted(p.attention.items())}}
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    run.add_output(st["out"])
    return {"records": len(preds)}


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "label": cmd_label, "split": cmd_split,
    "train": cmd_train, "pretrain-mlm": cmd_pretrain_mlm, "distill": cmd_distill,
    "selftrain": cmd_selftrain, "regime": cmd_regime, "msa-filter": cmd_msa_filter,
    "eval": cmd_eval, "kappa": cmd_kappa, "attn-dump": cmd_attn_dump,
}


def run_command(argv) -> int:
    args = build_parser().parse_args(argv)
    if not args.command:
        raise UsageError("a command is required (see --help)")
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    set_mode(args.numeric)
    settings, hyper = resolve(args)
    run = Run(args.command, settings, hyper, args.seed)
    result = COMMANDS[args.command](settings, run)
    if args.run_manifest:
        Path(args.run_manifest).write_text(json.dumps(run.manifest(), indent=1, sort_keys=True)
                                           + "\n", encoding="utf-8")
    _emit(result, args.json)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run_command(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except E.DegenerateChance as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
