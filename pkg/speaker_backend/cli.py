import logging
import sys
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, TypeVar

import click
import coloredlogs
import pydantic

from . import __version__, kaldi_io
from .backend import (
    CosineBackend,
    MeanVector,
    PldaBackend,
    PldaModel,
    apply_mean_norm,
    compute_mean,
    fuse_scores,
    length_norm_set,
    plda_adapt,
    plda_train,
    score_trials,
)
from .backend.scoring import DEFAULT_CHUNK_SIZE
from .diarize import ClusterConfig, SubsegmentPlan, diarize_recordings, subsegment
from .errors import DataError, NumericError
from .logger import logger
from .margin_losses import (
    InterTopKConfig,
    MarginConfig,
    MarginVariant,
    Pooling,
    SubCenterConfig,
    ToyTrainConfig,
    make_toy_dataset,
    toy_train,
)
from .metrics import (
    DcfParams,
    compute_der,
    compute_der_per_recording,
    compute_eer,
    compute_min_dcf,
)
from .models import EmbeddingSet, Segment

LOG_FORMAT = "%(levelname)s %(message)s"

VARIANTS = {
    "softmax": MarginVariant.softmax,
    "a_softmax": MarginVariant.a_softmax,
    "am": MarginVariant.am_softmax,
    "am_softmax": MarginVariant.am_softmax,
    "aam": MarginVariant.aam_softmax,
    "aam_softmax": MarginVariant.aam_softmax,
}

Config = TypeVar("Config", bound=pydantic.BaseModel)


class ExitStatus(IntEnum):
    OK = 0
    USAGE = 1
    DATA = 2
    NUMERIC = 3


def _config(model: Type[Config], **values: Any) -> Config:
    try:
        return model(**values)
    except pydantic.ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or model.__name__
        raise click.UsageError(f"Invalid {field}: {error['msg']}")


def _prepare(
    embeddings: EmbeddingSet, mean_path: Optional[str], length_norm: bool
) -> EmbeddingSet:
    if mean_path:
        embeddings = apply_mean_norm(
            embeddings, MeanVector(mean=kaldi_io.read_mean(mean_path))
        )
    if length_norm:
        embeddings = length_norm_set(embeddings)
    return embeddings


output_option = click.option(
    "--output", "-o", default="-", show_default=True, help="Output file, - is stdout"
)
mean_option = click.option("--mean", help="Mean vector archive to subtract first")
length_norm_option = click.option(
    "--length-norm/--no-length-norm",
    default=True,
    show_default=True,
    help="Scale embeddings to norm sqrt(dim)",
)
workers_option = click.option(
    "--workers", default=1, show_default=True, type=click.IntRange(min=1)
)
chunk_option = click.option(
    "--chunk-size",
    default=DEFAULT_CHUNK_SIZE,
    show_default=True,
    type=click.IntRange(min=1),
    help="Trials scored per chunk",
)


@click.group()
@click.version_option(__version__, message="%(version)s")
@click.option("--verbose", "-v", is_flag=True, help="Log debug messages")
def cli(verbose: bool):
    """
    Speaker embedding back-end: scoring, PLDA, metrics and diarization
    """
    level = logging.DEBUG if verbose else logging.INFO
    coloredlogs.install(level=level, fmt=LOG_FORMAT)


@cli.command()
@click.option("--embeddings", "-e", required=True, help="Embeddings .ark or .scp")
@click.option("--output", "-o", required=True, help="Output mean archive")
def mean(embeddings: str, output: str):
    """
    Estimate the domain mean of an embedding set
    """
    result = compute_mean(kaldi_io.load_embeddings(embeddings))
    logger.info("Mean of %d embeddings", result.count)
    kaldi_io.write_mean(result.mean, output)


# Scoring


@cli.group()
def score():
    """
    Score trial lists
    """


@score.command("cosine")
@click.option("--enroll", required=True, help="Enrollment embeddings")
@click.option("--test", required=True, help="Test embeddings")
@click.option("--trials", required=True, help="Trial list")
@mean_option
@workers_option
@chunk_option
@output_option
def score_cosine(
    enroll: str,
    test: str,
    trials: str,
    mean: Optional[str],
    workers: int,
    chunk_size: int,
    output: str,
):
    scores = score_trials(
        CosineBackend(),
        _prepare(kaldi_io.load_embeddings(enroll), mean, False),
        _prepare(kaldi_io.load_embeddings(test), mean, False),
        kaldi_io.read_trials(trials),
        workers=workers,
        chunk_size=chunk_size,
    )
    kaldi_io.write_scores(scores, output)


@score.command("fuse")
@click.option("--scores", "-s", "score_files", multiple=True, required=True)
@click.option("--weight", "-w", "weights", multiple=True, type=float)
@output_option
def score_fuse(score_files: Tuple[str, ...], weights: Tuple[float, ...], output: str):
    """
    Weighted sum of several score files, equal weights by default
    """
    if weights and len(weights) != len(score_files):
        raise click.UsageError("Give one --weight per --scores file")
    fused = fuse_scores(
        [kaldi_io.read_scores(path) for path in score_files], list(weights) or None
    )
    kaldi_io.write_scores(fused, output)


# PLDA


@cli.group()
def plda():
    """
    Train, adapt and score with two-covariance PLDA
    """


@plda.command("train")
@click.option("--embeddings", "-e", required=True)
@click.option("--utt2spk", required=True, help="Utterance to speaker map")
@click.option("--iters", default=10, show_default=True, type=click.IntRange(min=0))
@mean_option
@length_norm_option
@click.option("--output", "-o", required=True, help="Output model")
def plda_train_cmd(
    embeddings: str,
    utt2spk: str,
    iters: int,
    mean: Optional[str],
    length_norm: bool,
    output: str,
):
    data = _prepare(kaldi_io.load_embeddings(embeddings), mean, length_norm)
    result = plda_train(data, kaldi_io.read_utt2spk(utt2spk), iters=iters)
    logger.info("Final log-likelihood %.6f", result.loglik[-1])
    result.model.save(output)


@plda.command("adapt")
@click.option("--model", "-m", required=True)
@click.option("--embeddings", "-e", required=True, help="Unlabeled in-domain set")
@click.option("--alpha", default=0.5, show_default=True, type=click.FloatRange(0, 1))
@click.option("--split", default=0.5, show_default=True, type=click.FloatRange(0, 1))
@mean_option
@length_norm_option
@click.option("--output", "-o", required=True, help="Output model")
def plda_adapt_cmd(
    model: str,
    embeddings: str,
    alpha: float,
    split: float,
    mean: Optional[str],
    length_norm: bool,
    output: str,
):
    data = _prepare(kaldi_io.load_embeddings(embeddings), mean, length_norm)
    plda_adapt(PldaModel.load(model), data, alpha, split).save(output)


@plda.command("score")
@click.option("--model", "-m", required=True)
@click.option("--enroll", required=True)
@click.option("--test", required=True)
@click.option("--trials", required=True)
@mean_option
@length_norm_option
@workers_option
@chunk_option
@output_option
def plda_score_cmd(
    model: str,
    enroll: str,
    test: str,
    trials: str,
    mean: Optional[str],
    length_norm: bool,
    workers: int,
    chunk_size: int,
    output: str,
):
    scores = score_trials(
        PldaBackend(PldaModel.load(model)),
        _prepare(kaldi_io.load_embeddings(enroll), mean, length_norm),
        _prepare(kaldi_io.load_embeddings(test), mean, length_norm),
        kaldi_io.read_trials(trials),
        workers=workers,
        chunk_size=chunk_size,
    )
    kaldi_io.write_scores(scores, output)


# Metrics


@cli.group()
def metrics():
    """
    Verification and diarization metrics
    """


@metrics.command("eer-dcf")
@click.option("--scores", "-s", required=True)
@click.option("--trials", "-t", required=True, help="Labeled trial list")
@click.option("--p-target", default=0.01, show_default=True, type=float)
@click.option("--c-miss", default=1.0, show_default=True, type=float)
@click.option("--c-fa", default=1.0, show_default=True, type=float)
def eer_dcf(scores: str, trials: str, p_target: float, c_miss: float, c_fa: float):
    """
    Print EER (percent), minDCF and the threshold of each
    """
    params = _config(DcfParams, p_target=p_target, c_miss=c_miss, c_fa=c_fa)
    score_list = kaldi_io.read_scores(scores)
    trial_list = kaldi_io.read_trials(trials)
    eer = compute_eer(score_list, trial_list)
    dcf = compute_min_dcf(score_list, trial_list, params)
    click.echo(
        f"EER={100 * eer.value:.3f} minDCF={dcf.value:.4f} "
        f"thresholds={eer.threshold:.6f},{dcf.threshold:.6f}"
    )


@metrics.command("der")
@click.option("--ref", "-r", required=True, help="Reference RTTM")
@click.option("--hyp", required=True, help="Hypothesis RTTM")
@click.option("--collar", default=0.25, show_default=True, type=click.FloatRange(0))
@click.option("--score-overlap/--no-score-overlap", default=True, show_default=True)
def der(ref: str, hyp: str, collar: float, score_overlap: bool):
    """
    Print missed speech, false alarm, speaker confusion and DER in percent
    """
    reference = kaldi_io.read_rttm(ref)
    hypothesis = kaldi_io.read_rttm(hyp)
    per_recording = compute_der_per_recording(
        reference, hypothesis, collar, score_overlap
    )
    for recording_id, breakdown in per_recording.items():
        logger.debug("%s: DER %.3f", recording_id, breakdown.der_pct)
    total = compute_der(reference, hypothesis, collar, score_overlap)
    click.echo(
        f"MISS={total.miss_pct:.3f} FA={total.fa_pct:.3f} "
        f"SC={total.confusion_pct:.3f} DER={total.der_pct:.3f}"
    )


# Diarization


def plan_options(func):
    for option in reversed(
        [
            click.option(
                "--vad",
                multiple=True,
                help="VAD .lab file, the file stem is the recording id",
            ),
            click.option("--window", default=1.5, show_default=True, type=float),
            click.option("--shift", default=0.75, show_default=True, type=float),
            click.option("--min-dur", default=0.0, show_default=True, type=float),
        ]
    ):
        func = option(func)
    return func


def _read_vads(vad_files: Sequence[str]) -> Dict[str, List[Segment]]:
    vads = {}
    for path in vad_files:
        recording_id = Path(path).stem
        if recording_id in vads:
            raise click.UsageError(f"Recording {recording_id} given twice")
        vads[recording_id] = kaldi_io.read_lab(path, recording_id)
    return vads


@cli.group(invoke_without_command=True)
@plan_options
@click.option("--embeddings", "-e", help="Subsegment embeddings .ark or .scp")
@click.option("--p-percentile", default=0.95, show_default=True, type=float)
@click.option("--max-speakers", default=20, show_default=True, type=int)
@click.option("--num-speakers", type=int, help="Fixed number of speakers")
@click.option("--kmeans-restarts", default=10, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@output_option
@click.pass_context
def diarize(
    ctx: click.Context,
    vad: Tuple[str, ...],
    window: float,
    shift: float,
    min_dur: float,
    embeddings: Optional[str],
    p_percentile: float,
    max_speakers: int,
    num_speakers: Optional[int],
    kmeans_restarts: int,
    seed: int,
    output: str,
):
    """
    Cluster subsegment embeddings of VAD regions into speakers, writing RTTM
    """
    if ctx.invoked_subcommand is not None:
        return
    if not vad:
        raise click.UsageError("Missing option '--vad'")
    if not embeddings:
        raise click.UsageError("Missing option '--embeddings'")

    plan = _config(SubsegmentPlan, window=window, shift=shift, min_dur=min_dur)
    cfg = _config(
        ClusterConfig,
        p_percentile=p_percentile,
        max_speakers=max_speakers,
        fixed_speakers=num_speakers,
        kmeans_restarts=kmeans_restarts,
        seed=seed,
    )
    result = diarize_recordings(
        _read_vads(vad), kaldi_io.load_embeddings(embeddings), plan, cfg
    )
    kaldi_io.write_rttm(result, output)


@diarize.command("plan")
@plan_options
@output_option
def diarize_plan(
    vad: Tuple[str, ...], window: float, shift: float, min_dur: float, output: str
):
    """
    List the subsegments to embed, as a Kaldi segments file
    """
    if not vad:
        raise click.UsageError("Missing option '--vad'")
    plan = _config(SubsegmentPlan, window=window, shift=shift, min_dur=min_dur)
    vads = _read_vads(vad)
    planned = [
        item
        for recording_id in sorted(vads)
        for item in subsegment(vads[recording_id], plan)
    ]
    logger.info("Planned %d subsegments", len(planned))
    kaldi_io.write_segments(planned, output)


# Toy training


@cli.command("train-toy")
@click.option(
    "--variant",
    default="aam",
    show_default=True,
    type=click.Choice(sorted(VARIANTS)),
)
@click.option("--margin", default=0.2, show_default=True, type=float)
@click.option("--scale", default=32.0, show_default=True, type=float)
@click.option("--sub-centers", default=1, show_default=True, type=int)
@click.option("--topk", default=0, show_default=True, type=int)
@click.option("--topk-margin", default=0.0, show_default=True, type=float)
@click.option("--classes", default=4, show_default=True, type=int)
@click.option("--dim", default=8, show_default=True, type=int)
@click.option(
    "--pooling",
    default=Pooling.tap.value,
    show_default=True,
    type=click.Choice([p.value for p in Pooling]),
)
@click.option("--lr", default=0.05, show_default=True, type=float)
@click.option("--steps", default=500, show_default=True, type=int)
@click.option("--seed", default=1, show_default=True, type=int)
@output_option
def train_toy(
    variant: str,
    margin: float,
    scale: float,
    sub_centers: int,
    topk: int,
    topk_margin: float,
    classes: int,
    dim: int,
    pooling: str,
    lr: float,
    steps: int,
    seed: int,
    output: str,
):
    """
    Train a margin-softmax head on synthetic clusters, write the loss trace as CSV
    """
    cfg = _config(MarginConfig, variant=VARIANTS[variant], scale=scale, margin=margin)
    sub = _config(SubCenterConfig, centers=sub_centers)
    itk = _config(InterTopKConfig, k=topk, margin=topk_margin)
    if itk.k >= classes:
        raise click.UsageError("--topk must be smaller than --classes")
    train = _config(
        ToyTrainConfig,
        num_classes=classes,
        dim=dim,
        pooling=pooling,
        lr=lr,
        steps=steps,
        seed=seed,
    )
    result = toy_train(
        make_toy_dataset(train), cfg, sub, itk, train.lr, train.steps, train.seed
    )
    with click.open_file(output, "w") as f:
        f.write("step,loss\n")
        for step, loss in enumerate(result.losses):
            f.write(f"{step},{loss:.6f}\n")


def dispatch(argv: Optional[Sequence[str]] = None) -> ExitStatus:
    """
    Run the command line and map every failure to an exit status
    :param argv: Arguments without the program name, sys.argv by default
    :return: Exit status
    """
    try:
        code = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="speaker-backend",
            standalone_mode=False,
        )
    except click.ClickException as e:
        e.show()
        return ExitStatus.USAGE
    except click.Abort:
        return ExitStatus.USAGE
    except (DataError, OSError) as e:
        logger.error("%s", e)
        return ExitStatus.DATA
    except pydantic.ValidationError as e:
        logger.error("%s", e)
        return ExitStatus.DATA
    except NumericError as e:
        logger.error("%s", e)
        return ExitStatus.NUMERIC
    return ExitStatus.USAGE if code else ExitStatus.OK


def run():
    sys.exit(dispatch(sys.argv[1:]))
