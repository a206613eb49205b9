"""End-to-end runs: simulate, train three phases, evaluate, report, record a manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..checkpoint import save_checkpoint
from ..model import Model
from ..optim import NumericFailure
from ..room.dataset import SPLITS, SamplerConfig, default_jobs, load_bundles, render_dataset, sample_splits
from ..room.sources import SourcePool
from ..wpe import WpeConfig
from .config import TOY, ConfigError, TrainConfig
from .data import prepare_example, visual_streams
from .evaluate import evaluate_examples, model_waveforms, oracle_mask_waveform, wpe_on
from .report import lambda_table, write_report
from .train import train_phase

log = logging.getLogger(__name__)

DEFAULT_COUNTS = {"train": 60, "validation": 10, "test": 20}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = TOY
    # extra joint runs (one per lambda) on top of train.lam
    lambda_sweep: tuple = ()
    missing_fractions: tuple = (0.4, 0.8)
    wpe: WpeConfig = field(default_factory=WpeConfig)
    num_speakers: int = 24
    num_noises: int = 12

    def __post_init__(self):
        if set(self.counts) != set(SPLITS) or any(int(v) < 1 for v in self.counts.values()):
            raise ConfigError(f"counts needs positive entries for {SPLITS}")
        if any(not 0 <= f < 1 for f in self.missing_fractions):
            raise ConfigError("missing fractions must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "counts": dict(self.counts),
            "sampler": self.sampler.to_dict(),
            "train": self.train.to_dict(),
            "lambda_sweep": list(self.lambda_sweep),
            "missing_fractions": list(self.missing_fractions),
            "wpe": asdict(self.wpe),
            "num_speakers": self.num_speakers,
            "num_noises": self.num_noises,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        train = d.pop("train", {"preset": "toy"})
        if "preset" not in train:
            train = {"preset": "toy", **train}
        try:
            return cls(
                train=TrainConfig.from_dict(train),
                sampler=SamplerConfig.from_dict(d.pop("sampler", {})),
                wpe=WpeConfig(**d.pop("wpe", {})),
                lambda_sweep=tuple(d.pop("lambda_sweep", ())),
                missing_fractions=tuple(d.pop("missing_fractions", (0.4, 0.8))),
                **d,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        return _digest(self.to_dict())


def load_run_config(path=None, **overrides) -> RunConfig:
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    config_hash: str
    dataset_hash: str = ""
    checkpoints: list = field(default_factory=list)  # lineage: name, path, sha256, parent
    phases: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    status: str = "running"
    error: str | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str))


def simulate(cfg: RunConfig, out_dir, jobs: int | None = None) -> dict:
    pool = SourcePool(num_speakers=cfg.num_speakers, num_noises=cfg.num_noises, pool_seed=cfg.seed)
    scenes = sample_splits(cfg.counts, pool, cfg.seed, cfg.sampler)
    return render_dataset([s for split in SPLITS for s in scenes[split]], out_dir, jobs)


def prepare_split(data_dir, split: str, train_cfg: TrainConfig, jobs: int | None = None) -> list:
    bundles = load_bundles(data_dir, split)

    def prep(b):
        return prepare_example(b, use_angle=train_cfg.use_angle, visual_seed=train_cfg.visual_seed,
                               visual_dim=train_cfg.model.visual_dim)

    jobs = jobs or default_jobs()
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(prep, bundles))
    return [prep(b) for b in bundles]


def with_missing_frames(examples, bundles, train_cfg: TrainConfig, fraction: float, seed: int) -> list:
    """Copies of ``examples`` whose visual streams lose ``fraction`` of their frames."""
    out = []
    for ex, b in zip(examples, bundles):
        vt, vi = visual_streams(b, train_cfg.visual_seed, train_cfg.model.visual_dim, fraction, seed)
        out.append(replace(ex, visual_target=vt, visual_interferer=vi))
    return out


def run_pipeline(cfg: RunConfig, out_dir, jobs: int | None = None, data_dir=None) -> RunManifest:
    """Full run under ``out_dir``; the manifest records failures before re-raising them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_hash=cfg.digest(), config=cfg.to_dict())
    try:
        _run(cfg, out, jobs, data_dir, manifest)
        manifest.status = "ok"
    except NumericFailure as exc:
        manifest.status, manifest.error = "numeric_failure", str(exc)
        raise
    except Exception as exc:
        manifest.status, manifest.error = "failed", f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest.write(out / "run_manifest.json")
    return manifest


def _run(cfg: RunConfig, out: Path, jobs, data_dir, manifest: RunManifest) -> None:
    t0 = time.time()
    data = Path(data_dir) if data_dir else out / "data"
    if not (data / "manifest.json").exists():
        simulate(cfg, data, jobs)
    manifest.dataset_hash = json.loads((data / "manifest.json").read_text())["hash"]
    log.info("dataset %s ready (%.1fs)", manifest.dataset_hash, time.time() - t0)

    tc = replace(cfg.train, seed=cfg.seed, model=replace(cfg.train.model, init_seed=cfg.seed))
    train_set = prepare_split(data, "train", tc, jobs)
    val_set = prepare_split(data, "validation", tc, jobs)
    test_set = prepare_split(data, "test", tc, jobs)

    ckpt_dir = out / "checkpoints"

    def checkpoint(name, model, parent):
        m = save_checkpoint(ckpt_dir / name, model, {"parent": parent, "config_hash": tc.digest(),
                                                     "dataset_hash": manifest.dataset_hash})
        manifest.checkpoints.append({"name": name, "path": str(Path("checkpoints") / name),
                                     "sha256": m["sha256"], "parent": parent})

    model = Model(tc.model)
    manifest.phases["sep"] = train_phase(model, train_set, val_set, tc, "sep").to_dict()
    checkpoint("sep", model, None)
    manifest.phases["dereverb"] = train_phase(model, train_set, val_set, tc, "dereverb").to_dict()
    checkpoint("cascade", model, "sep")
    cascade = model_waveforms(model, test_set)

    joints = {}
    for lam in sorted({tc.lam, *cfg.lambda_sweep}):
        m = model.clone()
        key = f"joint_lam{lam:g}"
        manifest.phases[key] = train_phase(m, train_set, val_set, replace(tc, lam=lam), "joint").to_dict()
        checkpoint(key, m, "cascade")
        joints[lam] = m
    main = joints[tc.lam]

    systems = {
        "oracle_mask": oracle_mask_waveform,
        "sep": [w["sep"] for w in cascade],
        "cascade": [w["full"] for w in cascade],
        "wpe_cascade": wpe_on([w["sep"] for w in cascade], cfg.wpe),
        "joint": [w["full"] for w in model_waveforms(main, test_set)],
    }
    rows = evaluate_examples(test_set, systems, jobs)
    sweep = []
    for lam, m in joints.items():
        r = evaluate_examples(test_set, {f"joint_lam{lam:g}": [w["full"] for w in model_waveforms(m, test_set)]},
                              jobs, include_unprocessed=False)
        sweep.append((lam, r))
        if lam != tc.lam:
            rows += r
    test_bundles = load_bundles(data, "test")
    for k, frac in enumerate(cfg.missing_fractions):
        damaged = with_missing_frames(test_set, test_bundles, tc, frac, cfg.seed * 1000 + k)
        rows += evaluate_examples(damaged, {"joint": [w["full"] for w in model_waveforms(main, damaged)]},
                                  jobs, condition=f"missing{round(frac * 100)}", include_unprocessed=False)

    paths = write_report(rows, out / "eval", title=f"Run {manifest.config_hash}")
    (out / "eval" / "lambda_sweep.md").write_text(lambda_table(sweep) + "\n")
    csv_bytes = Path(paths["csv"]).read_bytes()
    manifest.metrics = {**paths, "lambda_sweep": str(out / "eval" / "lambda_sweep.md"),
                        "csv_sha256": hashlib.sha256(csv_bytes).hexdigest(), "rows": len(rows)}
    log.info("run finished in %.1fs", time.time() - t0)
