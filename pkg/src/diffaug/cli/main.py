"""Main CLI application for diffaug."""

import logging
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Any, get_args

import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from diffaug.benchmark import DEFAULT_STEPS, solver_benchmark
from diffaug.cli.runconfig import RunConfigManager
from diffaug.config import RunConfig, SolverMethod
from diffaug.data import (
    ManifestRow,
    load_manifest_samples,
    load_spectrogram_dir,
    manifest_from_urbansound8k,
    read_manifest,
    read_spectrogram,
    read_wav,
    resize_grid,
    write_manifest,
    write_pgm,
    write_spectrogram,
    write_wav,
)
from diffaug.denoisers import CondNetLite
from diffaug.diffusion import LabeledSample, fit, stack_samples, write_loss_trace
from diffaug.dsp import AugmentPolicy, Waveform, apply_policy, featurize, synthesize_ambience
from diffaug.evaluation import evaluate_arms
from diffaug.exceptions import ConfigError, DiffaugError
from diffaug.samplers import sample
from diffaug.schedule import linear_schedule
from diffaug.selection import (
    ConvClassifier,
    accuracy,
    sweep_frame,
    topk_filter,
    topk_sweep,
    train_discriminator,
)

app = typer.Typer(
    name="diffaug",
    help="diffaug - diffusion-based data augmentation for spectrogram classifiers",
    add_completion=True,
)
console = Console()
logger = logging.getLogger("diffaug.cli")


@app.callback()
def main(
    ctx: typer.Context,
    config: str | None = typer.Option(
        None,
        "--config",
        "-c",
        envvar="DIFFAUG_CONFIG",
        help="Path to a key = value config file",
    ),
    out: Path | None = typer.Option(None, "--out", "-o", help="Output directory"),
    seed: int | None = typer.Option(None, "--seed", help="Random seed"),
    workers: int | None = typer.Option(None, "--workers", help="Worker threads"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    """
    Global options for diffaug.

    Setting priority:
    1. Command-line flags
    2. Config file (--config or DIFFAUG_CONFIG)
    3. DIFFAUG_* environment variables
    4. Built-in defaults
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )
    ctx.obj = {
        "manager": RunConfigManager(config_path=config),
        "overrides": {"out": out, "seed": seed, "workers": workers},
    }


# -- helpers -----------------------------------------------------------------


class MethodChoice(str, Enum):
    ANCESTRAL = "ancestral"
    FIRST_ORDER = "first_order"
    DPM2S = "dpm2s"
    DPM2M = "dpm2m"


class ThresholdChoice(str, Enum):
    NONE = "none"
    STATIC = "static"
    DYNAMIC = "dynamic"


class PredictionChoice(str, Enum):
    DATA = "data"
    NOISE = "noise"


class SpacingChoice(str, Enum):
    UNIFORM_T = "uniform_t"
    UNIFORM_LAMBDA = "uniform_lambda"


class DiscriminatorData(str, Enum):
    AUGMENTED = "augmented"
    ENTIRE = "entire"


def _value(choice: Enum | None) -> str | None:
    return None if choice is None else str(choice.value)


def _check_methods(value: str) -> str:
    """Reject unknown names in a comma list of solver methods as a usage error."""
    for name in value.split(","):
        if name not in get_args(SolverMethod):
            raise typer.BadParameter(f"unknown solver method {name!r}")
    return value


def _settings(ctx: typer.Context, **overrides: Any) -> RunConfig:
    manager: RunConfigManager = ctx.obj["manager"]
    settings = manager.resolve({**ctx.obj["overrides"], **overrides})
    snapshot = manager.save_snapshot(settings)
    logger.debug("Resolved configuration written to %s", snapshot)
    return settings


@contextmanager
def _failures() -> Iterator[None]:
    """Report library and file errors in red and exit with status 1."""
    try:
        yield
    except FileNotFoundError as e:
        console.print(f"[red]✗ File not found: {e.filename or e}[/red]")
        raise typer.Exit(1) from e
    except DiffaugError as e:
        console.print(f"[red]✗ {e}[/red]")
        raise typer.Exit(1) from e


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(2, "No such file or directory", str(path))
    return path


def _resized(samples: Sequence[LabeledSample], size: int) -> list[LabeledSample]:
    return [LabeledSample(resize_grid(s.spectrogram, size), s.class_id, s.fold) for s in samples]


def _load_manifest(path: Path, size: int) -> list[LabeledSample]:
    rows = read_manifest(_require(path))
    return _resized(load_manifest_samples(rows, path.parent), size)


def _load_dir(path: Path | None, size: int) -> list[LabeledSample]:
    if path is None:
        return []
    return _resized(load_spectrogram_dir(_require(path)), size)


def _num_classes(samples: Sequence[LabeledSample], given: int | None) -> int:
    if not samples:
        raise ConfigError("no labelled samples to infer the class count from")
    return given or max(s.class_id for s in samples) + 1


def _grid_path(directory: Path, index: int, row: ManifestRow, suffix: str = "") -> Path:
    return directory / f"{index:05d}_{Path(row.path).stem}{suffix}.sgrm"


def _parse_ints(text: str) -> list[int]:
    """'1,2,5' or '1..4' into a list of ints."""
    text = text.replace(" ", "")
    if ".." in text:
        low, high = text.split("..", 1)
        return list(range(int(low), int(high) + 1))
    return [int(part) for part in text.split(",") if part]


# -- commands ----------------------------------------------------------------


@app.command("convert-manifest")
def convert_manifest(
    ctx: typer.Context,
    metadata: Path = typer.Option(..., "--metadata", help="UrbanSound8K metadata CSV"),
    audio_root: Path = typer.Option(..., "--audio-root", help="Directory holding fold1..fold10"),
) -> None:
    """
    Build a manifest from UrbanSound8K metadata.

    Example:
        diffaug --out runs/us8k convert-manifest --metadata UrbanSound8K.csv --audio-root audio
    """
    with _failures():
        settings = _settings(ctx)
        rows = manifest_from_urbansound8k(_require(metadata), audio_root.resolve())
        target = settings.out / "manifest.csv"
        write_manifest(target, rows)
        console.print(f"[green]✓[/green] Wrote {len(rows)} rows to {target}")


@app.command("featurize")
def featurize_clips(
    ctx: typer.Context,
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Audio manifest CSV"),
    image_size: int | None = typer.Option(None, "--image-size", help="Grid side length"),
) -> None:
    """
    Convert every clip of a manifest into a labelled log-mel SGRM file.

    Writes <out>/spectrograms/*.sgrm and <out>/features.csv.

    Example:
        diffaug --out runs/demo featurize --manifest data/manifest.csv
    """
    with _failures():
        settings = _settings(ctx, image_size=image_size)
        rows = read_manifest(_require(manifest))
        features = settings.feature_config()
        target = settings.out / "spectrograms"
        target.mkdir(parents=True, exist_ok=True)

        def convert(item: tuple[int, ManifestRow]) -> ManifestRow:
            index, row = item
            waveform = read_wav(_require(row.resolve(manifest.parent)), features.sample_rate)
            grid = resize_grid(featurize(waveform, features), settings.image_size)
            path = _grid_path(target, index, row)
            write_spectrogram(path, grid, row.class_id)
            return row.model_copy(update={"path": str(path.relative_to(settings.out))})

        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            converted = list(pool.map(convert, enumerate(rows)))
        write_manifest(settings.out / "features.csv", converted)
        console.print(f"[green]✓[/green] Featurized {len(converted)} clips into {target}")


@app.command("augment")
def augment(
    ctx: typer.Context,
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Audio manifest CSV"),
    ambience: list[Path] = typer.Option(
        [], "--ambience", help="Ambience WAV file (repeatable)"
    ),
    copies: int | None = typer.Option(None, "--copies", help="Augmented copies per clip"),
) -> None:
    """
    Apply the traditional augmentation policy to every clip and featurize the result.

    Augmented grids keep the source clip's fold. Writes <out>/augmented/*.sgrm
    and <out>/augmented.csv.

    Example:
        diffaug --out runs/demo augment --manifest data/manifest.csv --ambience street.wav
    """
    with _failures():
        settings = _settings(ctx, augment_copies=copies)
        features = settings.feature_config()
        policy = AugmentPolicy(noise_weight=settings.ambience_weight)
        rows = read_manifest(_require(manifest))
        clips: list[Waveform] = [read_wav(_require(p), features.sample_rate) for p in ambience]
        if not clips:
            console.print("[yellow]⚠[/yellow] No ambience given; synthesizing demo clips")
            logger.warning("Using synthesized crowd/street/restaurant ambience")
            ambience_rng = np.random.default_rng(settings.seed)
            clips = [
                synthesize_ambience(kind, 60.0, features.sample_rate, ambience_rng)
                for kind in ("crowd", "street", "restaurant")
            ]
            for kind, clip in zip(("crowd", "street", "restaurant"), clips, strict=True):
                write_wav(settings.out / f"ambience_{kind}.wav", clip)

        target = settings.out / "augmented"
        target.mkdir(parents=True, exist_ok=True)
        jobs = [(i, c, row) for i, row in enumerate(rows) for c in range(settings.augment_copies)]

        def run(job: tuple[int, int, ManifestRow]) -> ManifestRow:
            index, copy, row = job
            seq = np.random.SeedSequence(settings.seed, spawn_key=(index, copy))
            rng = np.random.default_rng(seq)
            waveform = read_wav(_require(row.resolve(manifest.parent)), features.sample_rate)
            augmented = apply_policy(waveform, policy, rng, clips)
            grid = resize_grid(featurize(augmented, features), settings.image_size)
            path = _grid_path(target, index, row, f"_aug{copy}")
            write_spectrogram(path, grid, row.class_id)
            return row.model_copy(update={"path": str(path.relative_to(settings.out))})

        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            written = list(pool.map(run, jobs))
        write_manifest(settings.out / "augmented.csv", written)
        console.print(f"[green]✓[/green] Wrote {len(written)} augmented grids to {target}")


@app.command("train-dpm")
def train_dpm(
    ctx: typer.Context,
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Feature manifest CSV"),
    num_classes: int | None = typer.Option(None, "--num-classes", help="Class count"),
    epochs: int | None = typer.Option(None, "--epochs", help="Training epochs"),
    batch_size: int | None = typer.Option(None, "--batch-size", help="Batch size"),
) -> None:
    """
    Train the conditional denoiser with label dropout.

    Writes <out>/denoiser.ckpt and <out>/loss_trace.csv.

    Example:
        diffaug --out runs/demo train-dpm --manifest runs/demo/features.csv --epochs 500
    """
    with _failures():
        settings = _settings(ctx, dpm_epochs=epochs, dpm_batch_size=batch_size)
        samples = _load_manifest(manifest, settings.image_size)
        classes = _num_classes(samples, num_classes)
        schedule = linear_schedule(settings.timesteps, settings.beta_start, settings.beta_end)
        model = CondNetLite(settings.condnet_config(classes), seed=settings.seed)
        result = fit(model, samples, settings.train_config(), schedule)
        result.model.save(settings.out / "denoiser.ckpt")
        write_loss_trace(settings.out / "loss_trace.csv", result.losses)
        console.print(
            f"[green]✓[/green] Trained denoiser: loss {result.losses[0]:.4f} → "
            f"{result.losses[-1]:.4f}"
        )


@app.command("sample")
def sample_cmd(
    ctx: typer.Context,
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Denoiser checkpoint"),
    count: int = typer.Option(100, "--n", help="Number of samples"),
    label: int | None = typer.Option(None, "--label", help="Class for every sample"),
    unconditional: bool = typer.Option(False, "--unconditional", help="Ignore class labels"),
    method: MethodChoice | None = typer.Option(None, "--method", help="Solver method"),
    steps: int | None = typer.Option(None, "--steps", help="Solver steps"),
    guidance_w: float | None = typer.Option(None, "--guidance-w", help="Guidance scale w"),
    threshold: ThresholdChoice | None = typer.Option(None, "--threshold", help="Thresholding"),
    prediction: PredictionChoice | None = typer.Option(None, "--prediction", help="Model form"),
    spacing: SpacingChoice | None = typer.Option(None, "--spacing", help="Time spacing"),
) -> None:
    """
    Generate labelled grids with the trained denoiser.

    Without --label, classes are assigned round-robin. Writes <out>/samples/*.sgrm.

    Example:
        diffaug --out runs/demo sample --checkpoint runs/demo/denoiser.ckpt --steps 20
    """
    with _failures():
        settings = _settings(
            ctx,
            method=_value(method),
            steps=steps,
            guidance_w=guidance_w,
            threshold=_value(threshold),
            prediction=_value(prediction),
            spacing=_value(spacing),
        )
        model = CondNetLite.load(_require(checkpoint))
        schedule = linear_schedule(model.config.timesteps, settings.beta_start, settings.beta_end)
        if unconditional:
            labels = None
        elif label is not None:
            labels = np.full(count, label, dtype=np.int64)
        else:
            labels = np.arange(count, dtype=np.int64) % model.num_classes
        grids = sample(model, schedule, settings.solver_config(), count, labels)

        target = settings.out / "samples"
        target.mkdir(parents=True, exist_ok=True)
        for index, grid in enumerate(grids):
            tag = None if labels is None else int(labels[index])
            write_spectrogram(target / f"{index:05d}.sgrm", grid[0], tag)
        console.print(f"[green]✓[/green] Wrote {len(grids)} samples to {target}")


@app.command("filter")
def filter_cmd(
    ctx: typer.Context,
    samples_dir: Path = typer.Option(..., "--samples", help="Directory of labelled samples"),
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Real feature manifest"),
    augmented: Path | None = typer.Option(
        None, "--augmented", help="Traditionally augmented feature manifest"
    ),
    discriminator: Path | None = typer.Option(
        None, "--discriminator", help="Reuse a trained discriminator checkpoint"
    ),
    k: int | None = typer.Option(None, "--k", help="Top-k acceptance"),
    sweep: str | None = typer.Option(None, "--sweep", help="k values, e.g. 1..10"),
    data: DiscriminatorData | None = typer.Option(
        None, "--discriminator-data", help="Discriminator training data"
    ),
) -> None:
    """
    Keep generated samples whose label is in the discriminator's top-k classes.

    Writes <out>/filtered/*.sgrm, <out>/selection_report.csv and, with
    --sweep, <out>/topk_sweep.csv.

    Example:
        diffaug --out runs/demo filter --samples runs/demo/samples --manifest runs/demo/features.csv
    """
    with _failures():
        settings = _settings(ctx, k=k, discriminator_data=_value(data))
        real = _load_manifest(manifest, settings.image_size)
        if discriminator is not None:
            clf = ConvClassifier.load(_require(discriminator))
        else:
            training = list(real)
            if settings.discriminator_data == "augmented":
                if augmented is None:
                    console.print("[yellow]⚠[/yellow] No --augmented manifest; using real data")
                else:
                    training += _load_manifest(augmented, settings.image_size)
            clf = train_discriminator(
                training, settings.classifier_config(), _num_classes(real, None)
            )
            clf.save(settings.out / "discriminator.ckpt")

        generated = _load_dir(samples_dir, settings.image_size)
        grids, labels = stack_samples(generated)
        accepted, accepted_labels, report = topk_filter(grids, labels, clf, settings.k)
        target = settings.out / "filtered"
        target.mkdir(parents=True, exist_ok=True)
        for index, (grid, tag) in enumerate(zip(accepted, accepted_labels, strict=True)):
            write_spectrogram(target / f"{index:05d}.sgrm", grid[0], int(tag))
        report.write_csv(settings.out / "selection_report.csv")
        if sweep:
            reports = topk_sweep(grids, labels, clf, _parse_ints(sweep))
            sweep_frame(reports).to_csv(settings.out / "topk_sweep.csv", index=False)
        console.print(
            f"[green]✓[/green] Accepted {report.accepted} of {report.total} samples "
            f"(k={settings.k})"
        )


@app.command("train-clf")
def train_clf(
    ctx: typer.Context,
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Real feature manifest"),
    synthetic: Path | None = typer.Option(None, "--synthetic", help="Accepted sample directory"),
    epochs: int | None = typer.Option(None, "--epochs", help="Training epochs"),
) -> None:
    """
    Train a classifier on real plus synthetic grids.

    Writes <out>/classifier.ckpt.

    Example:
        diffaug --out runs/demo train-clf -m runs/demo/features.csv --synthetic runs/demo/filtered
    """
    with _failures():
        settings = _settings(ctx, clf_epochs=epochs)
        real = _load_manifest(manifest, settings.image_size)
        training = real + _load_dir(synthetic, settings.image_size)
        clf = train_discriminator(training, settings.classifier_config(), _num_classes(real, None))
        clf.save(settings.out / "classifier.ckpt")
        grids, labels = stack_samples(real)
        console.print(
            f"[green]✓[/green] Classifier accuracy on real data: "
            f"{accuracy(clf, grids, labels):.3f}"
        )


@app.command("evaluate")
def evaluate(
    ctx: typer.Context,
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Real feature manifest"),
    augmented: Path | None = typer.Option(None, "--augmented", help="Augmented feature manifest"),
    synthetic: Path | None = typer.Option(None, "--synthetic", help="Filtered sample directory"),
    unfiltered: Path | None = typer.Option(
        None, "--unfiltered", help="Unfiltered sample directory"
    ),
    folds: int | None = typer.Option(None, "--folds", help="Number of folds"),
) -> None:
    """
    K-fold accuracy of classifiers trained on each augmentation arm.

    Writes <out>/evaluation.csv.

    Example:
        diffaug --out runs/demo evaluate -m runs/demo/features.csv --synthetic runs/demo/filtered
    """
    with _failures():
        settings = _settings(ctx, folds=folds)
        real = _load_manifest(manifest, settings.image_size)
        traditional = _load_manifest(augmented, settings.image_size) if augmented else []
        frame = evaluate_arms(
            real,
            settings.classifier_config(),
            settings.folds,
            traditional=traditional,
            synthetic=_load_dir(synthetic, settings.image_size),
            unfiltered=_load_dir(unfiltered, settings.image_size),
            num_classes=_num_classes(real, None),
        )
        frame.to_csv(settings.out / "evaluation.csv", index=False)

        table = Table(title="Mean fold accuracy")
        table.add_column("Arm", style="cyan")
        table.add_column("Accuracy", justify="right")
        for record in frame[frame["fold"] == "mean"].to_dict("records"):
            table.add_row(str(record["arm"]), f"{record['accuracy']:.4f}")
        console.print(table)


@app.command("bench-solver")
def bench_solver(
    ctx: typer.Context,
    methods: str = typer.Option(
        "first_order,dpm2s,dpm2m", "--methods", help="Comma list", callback=_check_methods
    ),
    steps_list: str = typer.Option(
        ",".join(str(s) for s in DEFAULT_STEPS), "--steps-list", help="Comma list of step counts"
    ),
    seeds: str = typer.Option("0", "--seeds", help="Comma list of seeds"),
    count: int = typer.Option(10_000, "--n", help="Samples per run"),
    spacing: SpacingChoice = typer.Option(
        SpacingChoice.UNIFORM_LAMBDA, "--spacing", help="Time spacing"
    ),
) -> None:
    """
    W1 distance to the Gaussian oracle's data law versus solver steps.

    Writes <out>/bench_solver.csv with columns method, steps, seed, w1.

    Example:
        diffaug --out runs/bench bench-solver --seeds 0,1,2
    """
    with _failures():
        settings = _settings(ctx)
        chosen: list[SolverMethod] = methods.split(",")  # type: ignore[assignment]
        schedule = linear_schedule(settings.timesteps, settings.beta_start, settings.beta_end)
        frame = solver_benchmark(
            schedule,
            chosen,
            _parse_ints(steps_list),
            _parse_ints(seeds),
            n=count,
            workers=settings.workers,
            spacing=spacing.value,  # type: ignore[arg-type]
        )
        frame.to_csv(settings.out / "bench_solver.csv", index=False)
        console.print(f"[green]✓[/green] Benchmarked {len(frame)} runs")


@app.command("export-pgm")
def export_pgm(
    ctx: typer.Context,
    source: Path = typer.Argument(..., help="SGRM file or directory of them"),
) -> None:
    """
    Export spectrogram grids as binary PGM images.

    Example:
        diffaug --out runs/demo export-pgm runs/demo/filtered
    """
    with _failures():
        settings = _settings(ctx)
        _require(source)
        files = sorted(source.glob("*.sgrm")) if source.is_dir() else [source]
        target = settings.out / "pgm"
        target.mkdir(parents=True, exist_ok=True)
        for path in files:
            grid, _ = read_spectrogram(path)
            write_pgm(target / f"{path.stem}.pgm", grid)
        console.print(f"[green]✓[/green] Exported {len(files)} images to {target}")


if __name__ == "__main__":
    app()
