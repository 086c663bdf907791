"""Experiment orchestration behind the command-line tool.

Run directory layout (everything a command writes stays inside it)::

    <run>/config.ini            effective configuration
    <run>/mixture.json          mixture spec in raw coordinates + scale
    <run>/metrics.csv           one row every ``log_every`` steps
    <run>/checkpoints/step_NNNNNNN.json
    <run>/eval/<what>_<run>_stepNNNNNNN.{json,csv}
    <run>/manifest.json         written at start (status "running") and
                                replaced atomically when the run ends
"""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .ali_core import (
    DataSampler,
    build_ali_model,
    cond_train_step,
    init_trainer,
    ali_train_step,
)
from .baselines import (
    build_gan_model,
    build_semisup_model,
    build_vae_model,
    gan_train_step,
    init_gan_trainer,
    init_inverse_map,
    init_posthoc,
    init_vae,
    inverse_mapping_train_step,
    posthoc_train_step,
    semisup_classify,
    semisup_train_step,
    vae_train_step,
)
from .config import ConfigError, RunConfig, load_config
from .evaluation import (
    aggregate_coverage,
    decoder_mean,
    invertibility_diagnostic,
    latent_interpolate,
    latent_occupancy,
    mode_coverage,
    reconstruct,
)
from .mixture import GaussianMixture, assign_components, make_grid_mixture, sample
from .nn import (
    LOG_SIGMA_MAX,
    LOG_SIGMA_MIN,
    MlpParameters,
    NonFiniteError,
    make_rng,
    mlp_apply,
    mlp_init,
    network_from_dict,
    network_to_dict,
)

log = logging.getLogger(__name__)

MANIFEST_FORMAT_VERSION = 1
METRICS_HEADER = ("step", "Ld", "Lg", "mean_Dq", "mean_Dp")
EVAL_KINDS = ("coverage", "recon", "latent", "interp", "invert", "cond", "classify")
N_COVERAGE_SAMPLES = 10000


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, manifest: dict):
        super().__init__(message)
        self.manifest = manifest


class MissingArtifact(FileNotFoundError):
    pass


# -- data ---------------------------------------------------------------


@dataclass(frozen=True)
class ToyData:
    raw_mixture: GaussianMixture
    mixture: GaussianMixture  # standardized coordinates
    scale: float
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray


def prepare_data(cfg: RunConfig) -> ToyData:
    """Train and held-out splits from independent child seeds of ``data.seed``."""
    d = cfg.data
    raw = make_grid_mixture(d.side, d.spacing, d.sigma)
    train_seq, eval_seq = np.random.SeedSequence(d.seed).spawn(2)
    x, y = sample(raw, d.n_train, make_rng(train_seq))
    xe, ye = sample(raw, d.n_eval, make_rng(eval_seq))
    return ToyData(raw, raw.scaled(1.0 / d.scale), d.scale, x / d.scale, y, xe / d.scale, ye)


def condition_labels(cfg: RunConfig, labels: np.ndarray) -> tuple[np.ndarray, int]:
    if cfg.data.condition == "row":
        return labels // cfg.data.side, cfg.data.side
    return labels, cfg.data.side**2


def labeled_subset(cfg: RunConfig, data: ToyData) -> tuple[np.ndarray, np.ndarray]:
    idx = make_rng(np.random.SeedSequence([cfg.data.seed, 2])).choice(
        data.x_train.shape[0], cfg.run.n_labeled, replace=False
    )
    return data.x_train[idx], data.y_train[idx]


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(path: Path, doc) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def generate_data(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Write ``train.csv``, ``eval.csv`` (raw coordinates) and ``mixture.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        data = prepare_data(cfg)
        for name, x, y in (
            ("train.csv", data.x_train, data.y_train),
            ("eval.csv", data.x_eval, data.y_eval),
        ):
            rows = ([repr(a), repr(b), c] for (a, b), c in zip((x * data.scale).tolist(), y.tolist()))
            write_csv(out / name, ("x0", "x1", "label"), rows)
        write_json(out / "mixture.json", {**data.raw_mixture.to_dict(), "scale": data.scale})
    except OSError as e:
        raise OSError(f"cannot write dataset to {out}: {e}") from e
    return {"train": str(out / "train.csv"), "eval": str(out / "eval.csv"), "n_train": cfg.data.n_train}


# -- model runners --------------------------------------------------------


def load_checkpoint(path: str | Path) -> dict:
    """Checkpoint document from a file, or the latest one in a run directory."""
    p = Path(path)
    if p.is_dir():
        found = sorted((p / "checkpoints").glob("step_*.json"))
        if not found:
            raise MissingArtifact(f"no checkpoints under {p}; run `ali-lab train` first")
        p = found[-1]
    if not p.exists():
        raise MissingArtifact(f"checkpoint {p} does not exist")
    doc = json.loads(p.read_text())
    if doc.get("format_version") != 1:
        raise ConfigError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    doc["networks"] = {k: network_from_dict(v) for k, v in doc["networks"].items()}
    doc["path"] = str(p)
    return doc


def _hidden(cfg: RunConfig):
    return tuple(cfg.encoder.hidden), tuple(cfg.decoder.hidden), tuple(cfg.discriminator.hidden)


def _adam(cfg: RunConfig) -> dict:
    o = cfg.optimizer
    return {"lr": o.lr, "beta1": o.beta1, "beta2": o.beta2}


class AliRunner:
    kind = "ali"
    header = METRICS_HEADER

    def __init__(self, cfg: RunConfig, data: ToyData, rng: np.random.Generator):
        m = cfg.model
        enc, dec, disc = _hidden(cfg)
        self.m = cfg.run.batch_size
        self.sampler = DataSampler(data.x_train, data.y_train)
        model = build_ali_model(
            m.dim_x, m.dim_z, rng, enc, dec, disc, m.init_std, m.slope, dim_y=self._dim_y(cfg)
        )
        self.state = init_trainer(model, rng, **_adam(cfg))

    def _dim_y(self, cfg) -> int:
        return 0

    def step(self):
        self.state, met = ali_train_step(self.state, self.sampler, self.m)
        return met

    def loss(self, met) -> float:
        return met.Lg

    def networks(self) -> dict[str, MlpParameters]:
        mo = self.state.model
        return {"encoder": mo.encoder, "decoder": mo.decoder, "discriminator": mo.discriminator}


class CondAliRunner(AliRunner):
    kind = "cond-ali"

    def __init__(self, cfg, data, rng):
        super().__init__(cfg, data, rng)
        y, _ = condition_labels(cfg, data.y_train)
        self.sampler = DataSampler(data.x_train, y)

    def _dim_y(self, cfg) -> int:
        return condition_labels(cfg, np.zeros(1, dtype=int))[1]

    def step(self):
        self.state, met = cond_train_step(self.state, self.sampler, self.m)
        return met


class GanRunner(AliRunner):
    kind = "gan"

    def __init__(self, cfg, data, rng):
        m = cfg.model
        _, dec, disc = _hidden(cfg)
        self.m = cfg.run.batch_size
        self.sampler = DataSampler(data.x_train, data.y_train)
        model = build_gan_model(m.dim_x, m.dim_z, rng, dec, disc, m.init_std, m.slope)
        self.state = init_gan_trainer(model, rng, **_adam(cfg))

    def step(self):
        self.state, met = gan_train_step(self.state, self.sampler, self.m)
        return met

    def networks(self):
        return {"decoder": self.state.model.decoder, "discriminator": self.state.model.discriminator}


class PostHocRunner(AliRunner):
    kind = "posthoc"

    def __init__(self, cfg, data, rng):
        m = cfg.model
        enc, _, disc = _hidden(cfg)
        self.m = cfg.run.batch_size
        self.sampler = DataSampler(data.x_train, data.y_train)
        decoder = load_checkpoint(cfg.run.decoder_checkpoint)["networks"]["decoder"]
        self.state = init_posthoc(
            decoder, rng, m.dim_x, m.dim_z, enc, disc, m.init_std, m.slope, **_adam(cfg)
        )

    def step(self):
        self.state, met = posthoc_train_step(self.state, self.sampler, self.m)
        return met


@dataclass(frozen=True)
class LossRow:
    loss: float

    def as_row(self, step: int) -> list:
        return [step, self.loss]


class InvMapRunner:
    kind = "invmap"
    header = ("step", "loss")

    def __init__(self, cfg, data, rng):
        m = cfg.model
        self.m = cfg.run.batch_size
        decoder = load_checkpoint(cfg.run.decoder_checkpoint)["networks"]["decoder"]
        encoder = mlp_init(
            [m.dim_x, *cfg.encoder.hidden, 2 * m.dim_z], "gaussian", rng, m.init_std, m.slope
        )
        self.state = init_inverse_map(decoder, encoder, rng, **_adam(cfg))

    def step(self):
        self.state, loss = inverse_mapping_train_step(self.state, self.m)
        return LossRow(loss)

    def loss(self, met) -> float:
        return met.loss

    def networks(self):
        return {"encoder": self.state.encoder, "decoder": self.state.decoder}


class VaeRunner:
    kind = "vae"
    header = ("step", "elbo", "recon_term", "kl_term")

    def __init__(self, cfg, data, rng):
        m = cfg.model
        enc, dec, _ = _hidden(cfg)
        self.m = cfg.run.batch_size
        self.sampler = DataSampler(data.x_train, data.y_train)
        model = build_vae_model(m.dim_x, m.dim_z, rng, enc, dec, m.init_std, m.slope)
        self.state = init_vae(model, rng, **_adam(cfg))

    def step(self):
        self.state, met = vae_train_step(self.state, self.sampler, self.m)
        return met

    def loss(self, met) -> float:
        return -met.elbo

    def networks(self):
        return {"encoder": self.state.model.encoder, "decoder": self.state.model.decoder}


class SemiSupRunner(AliRunner):
    kind = "semisup"
    header = ("step", "Ld", "Lg", "L_sup", "labeled_accuracy")

    def __init__(self, cfg, data, rng):
        m = cfg.model
        enc, dec, disc = _hidden(cfg)
        self.m = cfg.run.batch_size
        self.sampler = DataSampler(data.x_train, None)
        self.labeled = labeled_subset(cfg, data)
        model = build_semisup_model(
            m.dim_x, m.dim_z, cfg.data.side**2, rng,
            encoder_hidden=enc, decoder_hidden=dec, discriminator_hidden=disc,
            init_std=m.init_std, slope=m.slope,
        )
        self.state = init_trainer(model, rng, **_adam(cfg))

    def step(self):
        self.state, met = semisup_train_step(self.state, self.sampler, self.labeled, self.m)
        return met


RUNNERS = {
    r.kind: r
    for r in (AliRunner, CondAliRunner, GanRunner, PostHocRunner, InvMapRunner, VaeRunner, SemiSupRunner)
}


def sample_model(
    kind: str, networks: dict, n: int, rng: np.random.Generator, n_cond: int = 0, cond=None
) -> np.ndarray:
    """Draws from the model's ``p(x)`` (standardized coordinates)."""
    dec = networks["decoder"]
    z = rng.standard_normal((n, dec.in_dim - n_cond))
    if n_cond:
        if cond is None:
            cond = rng.integers(0, n_cond, size=n)
        onehot = np.zeros((n, n_cond))
        onehot[np.arange(n), cond] = 1.0
        z = np.hstack([z, onehot])
    if kind == "vae":
        out = mlp_apply(dec, z)
        d = out.shape[1] // 2
        log_sigma = np.clip(out[:, d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return out[:, :d] + np.exp(log_sigma) * rng.standard_normal((n, d))
    return decoder_mean(dec, z)


# -- training -------------------------------------------------------------


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _save_checkpoint(run_dir: Path, kind: str, step: int, networks: dict, cfg: RunConfig) -> str:
    path = run_dir / "checkpoints" / f"step_{step:07d}.json"
    doc = {
        "format_version": 1,
        "model_kind": kind,
        "step": step,
        "data_scale": cfg.data.scale,
        "networks": {role: network_to_dict(p, role) for role, p in networks.items()},
    }
    write_json(path, doc)
    return str(path.relative_to(run_dir))


def eval_rng(cfg: RunConfig, step: int, salt: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence([cfg.run.seed, step, salt]))


def _coverage_snapshot(run_dir: Path, cfg: RunConfig, data: ToyData, kind: str, networks, step: int) -> dict:
    n_cond = condition_labels(cfg, np.zeros(1, dtype=int))[1] if kind == "cond-ali" else 0
    xs = sample_model(kind, networks, N_COVERAGE_SAMPLES, eval_rng(cfg, step, 1), n_cond)
    report = mode_coverage(data.mixture, xs)
    tag = f"{run_dir.name}_step{step:07d}"
    write_json(run_dir / "eval" / f"coverage_{tag}.json", report.to_dict())
    write_csv(
        run_dir / "eval" / f"coverage_counts_{tag}.csv",
        ("component", "count"),
        enumerate(report.counts),
    )
    return report.to_dict()


def train(cfg: RunConfig, run_dir: str | Path | None = None) -> dict:
    """Run the configured trainer to its step budget; returns the manifest."""
    cfg = cfg.validate()
    run_dir = Path(run_dir or cfg.run.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(cfg.to_ini())
    data = prepare_data(cfg)
    write_json(run_dir / "mixture.json", {**data.raw_mixture.to_dict(), "scale": data.scale})

    kind = cfg.run.model
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "run_id": run_dir.name,
        "model_kind": kind,
        "version": f"ali-lab {__version__}",
        "status": "running",
        "started_at": _stamp(),
        "finished_at": None,
        "config": cfg.to_dict(),
        "final_metrics": None,
        "checkpoints": [],
        "last_good_checkpoint": None,
    }
    write_json(run_dir / "manifest.json", manifest)

    rng = make_rng(cfg.run.seed)
    runner = RUNNERS[kind](cfg, data, rng)
    manifest["checkpoints"].append(_save_checkpoint(run_dir, kind, 0, runner.networks(), cfg))
    manifest["last_good_checkpoint"] = manifest["checkpoints"][-1]

    r = cfg.run
    last = None
    t0, c0 = time.perf_counter(), time.process_time()
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(runner.header)
        for step in range(1, r.steps + 1):
            try:
                met = runner.step()
            except NonFiniteError as e:
                fh.flush()
                manifest.update(status="aborted", finished_at=_stamp(), error=str(e), aborted_at_step=step)
                write_json(run_dir / "manifest.json", manifest)
                raise TrainingAborted(f"run {run_dir} aborted at step {step}: {e}", manifest) from e
            last = met
            if step % r.log_every == 0 or step == r.steps:
                writer.writerow(met.as_row(step))
            if r.checkpoint_every and (step % r.checkpoint_every == 0 or step == r.steps):
                manifest["checkpoints"].append(
                    _save_checkpoint(run_dir, kind, step, runner.networks(), cfg)
                )
                manifest["last_good_checkpoint"] = manifest["checkpoints"][-1]
            if r.eval_every and step % r.eval_every == 0 and kind != "invmap":
                _coverage_snapshot(run_dir, cfg, data, kind, runner.networks(), step)

    if not r.checkpoint_every:
        manifest["checkpoints"].append(_save_checkpoint(run_dir, kind, r.steps, runner.networks(), cfg))
        manifest["last_good_checkpoint"] = manifest["checkpoints"][-1]
    final = dict(zip(runner.header, last.as_row(r.steps)))
    final["loss"] = runner.loss(last)
    final["coverage"] = _coverage_snapshot(run_dir, cfg, data, kind, runner.networks(), r.steps)
    final["coverage"].pop("counts")
    manifest.update(status="complete", finished_at=_stamp(), final_metrics=final)
    manifest["train_seconds"] = round(time.perf_counter() - t0, 1)
    manifest["train_cpu_seconds"] = round(time.process_time() - c0, 1)
    write_json(run_dir / "manifest.json", manifest)
    log.info("run %s finished: %s", run_dir, final)
    return manifest


# -- evaluation -----------------------------------------------------------


def load_run(run_dir: str | Path) -> tuple[RunConfig, dict, ToyData]:
    run_dir = Path(run_dir)
    if not (run_dir / "config.ini").exists():
        raise MissingArtifact(f"{run_dir} is not a run directory (no config.ini)")
    cfg = load_config(run_dir / "config.ini")
    return cfg, load_checkpoint(run_dir), prepare_data(cfg)


def evaluate(run_dir: str | Path, which: str) -> dict:
    """Evaluate the latest checkpoint of a run; writes JSON/CSV under ``eval/``."""
    if which not in EVAL_KINDS:
        raise ConfigError(f"unknown evaluation {which!r}; expected one of {', '.join(EVAL_KINDS)}")
    run_dir = Path(run_dir)
    cfg, ckpt, data = load_run(run_dir)
    kind, step, nets = ckpt["model_kind"], ckpt["step"], ckpt["networks"]
    tag = f"{run_dir.name}_step{step:07d}"
    out = run_dir / "eval"
    rng = eval_rng(cfg, step, 100 + EVAL_KINDS.index(which))

    if which == "coverage":
        n_cond = condition_labels(cfg, np.zeros(1, dtype=int))[1] if kind == "cond-ali" else 0
        xs = sample_model(kind, nets, N_COVERAGE_SAMPLES, rng, n_cond)
        report = mode_coverage(data.mixture, xs).to_dict()
        write_json(out / f"coverage_{tag}.json", report)
        write_csv(out / f"coverage_counts_{tag}.csv", ("component", "count"), enumerate(report["counts"]))
        write_csv(out / f"samples_{tag}.csv", ("x0", "x1"), xs.tolist())
        return report

    if which == "cond":
        if kind != "cond-ali":
            raise ConfigError("cond evaluation needs a cond-ali run")
        _, n_cond = condition_labels(cfg, np.zeros(1, dtype=int))
        per_class = N_COVERAGE_SAMPLES // n_cond
        cond = np.repeat(np.arange(n_cond), per_class)
        xs = sample_model(kind, nets, cond.size, rng, n_cond, cond)
        got, _ = condition_labels(cfg, assign_components(data.mixture, xs))
        hits = got == cond
        report = {
            "n_samples": int(cond.size),
            "accuracy": float(hits.mean()),
            "per_class": [float(hits[cond == c].mean()) for c in range(n_cond)],
        }
        write_json(out / f"cond_{tag}.json", report)
        return report

    if which == "classify":
        if kind != "semisup":
            raise ConfigError("classify evaluation needs a semisup run")
        from .ali_core import AliModel

        model = AliModel(
            nets["encoder"], nets["decoder"], nets["discriminator"], cfg.model.dim_x, cfg.model.dim_z
        )
        pred = semisup_classify(model, data.x_eval)
        report = {"n_samples": int(pred.size), "accuracy": float(np.mean(pred == data.y_eval))}
        write_json(out / f"classify_{tag}.json", report)
        return report

    if "encoder" not in nets:
        raise MissingArtifact(f"{kind} run has no encoder; {which} evaluation needs one")
    if kind == "cond-ali":
        raise ConfigError("cond-ali runs support the coverage and cond evaluations only")
    enc, dec = nets["encoder"], nets["decoder"]

    if which == "recon":
        x_hat, mse = reconstruct(enc, dec, data.x_eval, rng)
        report = {"n_samples": int(data.x_eval.shape[0]), "mse": mse}
        write_json(out / f"recon_{tag}.json", report)
        write_csv(
            out / f"recon_{tag}.csv",
            ("x0", "x1", "xhat0", "xhat1"),
            np.hstack([data.x_eval, x_hat]).tolist(),
        )
        return report
    if which == "latent":
        occ = latent_occupancy(enc, data.x_eval, rng)
        report = occ.to_dict()
        write_json(out / f"latent_{tag}.json", report)
        write_csv(
            out / f"latent_{tag}.csv",
            ("z0", "z1", "label"),
            [[*z[:2], int(c)] for z, c in zip(occ.z.tolist(), data.y_eval)],
        )
        return report
    if which == "interp":
        a, b = data.mixture.centroids[0], data.mixture.centroids[-1]
        path = latent_interpolate(enc, dec, a, b, 11)
        report = {"from": a.tolist(), "to": b.tolist(), "points": path.tolist()}
        write_json(out / f"interp_{tag}.json", report)
        return report
    report = invertibility_diagnostic(enc, dec, data.x_eval, rng)
    write_json(out / f"invert_{tag}.json", report)
    return report


# -- random search ----------------------------------------------------------


def search_space_draw(rng: np.random.Generator) -> dict[str, str]:
    """Learning rate and init std log-uniform, beta1 from {0.5, 0.9}."""
    lr = float(np.exp(rng.uniform(np.log(1e-5), np.log(1e-3))))
    beta1 = float(rng.choice([0.5, 0.9]))
    init_std = float(np.exp(rng.uniform(np.log(0.003), np.log(0.03))))
    return {"optimizer.lr": repr(lr), "optimizer.beta1": repr(beta1), "model.init_std": repr(init_std)}


def _search_one(args) -> dict:
    cfg, run_dir, hp = args
    try:
        manifest = train(cfg, run_dir)
    except TrainingAborted as e:
        return {"run": Path(run_dir).name, "status": "aborted", **hp, "error": str(e)}
    fm = manifest["final_metrics"]
    return {
        "run": Path(run_dir).name,
        "status": "complete",
        **hp,
        "seed": cfg.run.seed,
        "covered": fm["coverage"]["covered"],
        "final_loss": fm["loss"],
    }


def search(cfg: RunConfig, out_dir: str | Path, n_runs: int = 10, workers: int = 1) -> dict:
    """Random hyperparameter sweep; writes ``leaderboard.csv`` and ``search.json``.

    Ranking: covered modes descending, then final generator loss ascending.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    cfg = cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hp_rng = make_rng(np.random.SeedSequence([cfg.run.seed, 9001]))
    jobs = []
    for i in range(n_runs):
        hp = search_space_draw(hp_rng)
        run_cfg = cfg.with_overrides({**hp, "run.seed": str(cfg.run.seed + i)})
        jobs.append((run_cfg, str(out / f"run_{i:02d}"), hp))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_search_one, jobs))
    else:
        results = [_search_one(j) for j in jobs]

    done = [r for r in results if r["status"] == "complete"]
    done.sort(key=lambda r: (-r["covered"], r["final_loss"], r["run"]))
    for rank, r in enumerate(done, 1):
        r["rank"] = rank
        r["best"] = rank == 1
    failed = [r for r in results if r["status"] != "complete"]
    cols = ("rank", "run", "covered", "final_loss", "optimizer.lr", "optimizer.beta1", "model.init_std", "seed", "best")
    write_csv(out / "leaderboard.csv", cols, [[r.get(c) for c in cols] for r in done])
    summary = {
        "model_kind": cfg.run.model,
        "n_runs": n_runs,
        "completed": len(done),
        "failed": [r["run"] for r in failed],
        "coverage": aggregate_coverage([r["covered"] for r in done]) if done else None,
        "best_run": done[0]["run"] if done else None,
        "leaderboard": done,
    }
    write_json(out / "search.json", summary)
    if not done:
        raise TrainingAborted(f"all {n_runs} search runs failed", summary)
    return summary


# -- figures ----------------------------------------------------------------


def _artifact(run_dir: Path, name: str, step: int) -> Path:
    return run_dir / "eval" / f"{name}_{run_dir.name}_step{step:07d}.csv"


def plot_runs(run_dirs: list[str | Path], out_path: str | Path) -> Path:
    """One figure column per run from its latest evaluation artifacts."""
    from .plotting import PanelData, read_csv_columns, render_figure

    columns, missing = [], []
    for rd in map(Path, run_dirs):
        cfg, ckpt, data = load_run(rd)
        kind, step = ckpt["model_kind"], ckpt["step"]
        needed = {"samples": "coverage"}
        if "encoder" in ckpt["networks"] and kind != "cond-ali":
            needed.update(latent="latent", recon="recon")
        found = {}
        for name, which in needed.items():
            p = _artifact(rd, name, step)
            if p.exists():
                found[name] = read_csv_columns(p)[1]
            else:
                missing.append(f"ali-lab eval --out {rd} --which {which}")
        if missing:
            continue
        lat, rec = found.get("latent"), found.get("recon")
        columns.append(
            PanelData(
                title=f"{kind} ({rd.name})",
                mixture=data.mixture,
                data=data.x_eval,
                labels=data.y_eval,
                z=None if lat is None else lat[:, :2],
                z_labels=None if lat is None else lat[:, 2].astype(int),
                x_in=None if rec is None else rec[:, :2],
                x_hat=None if rec is None else rec[:, 2:],
                samples=found["samples"],
            )
        )
    if missing:
        raise MissingArtifact("missing evaluation artifacts; run first:\n  " + "\n  ".join(missing))
    return render_figure(columns, out_path, caption=", ".join(c.title for c in columns))
