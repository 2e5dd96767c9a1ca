"""Three-branch autoregressive decoding.

One decode job drives up to three sessions over the same token stream:

- base: the backbone conditioned on the text prompt plus the omni payload,
- neg: the backbone on the text prompt alone (payload withheld),
- guide: the reasoner on the text prompt plus an optional think tag.

Each step gathers one logit vector per branch (concurrently, joined before
fusion), fuses them under the configured strategy, samples exactly one
token, and broadcasts it to every open session so all branches stay on the
same prefix. Per-branch wall-clock latencies land in the step traces;
prefill and generate timings mirror the two phases of cached inference.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EngineError
from .guidance import (
    STRATEGY_BRANCHES,
    GuidanceConfig,
    average_fusion,
    lrm_guide_fixed,
    stepwise_fuse,
    vcd_ablation_mix,
)
from .report import StepTrace
from .sampler import SamplerConfig, make_rng, sample_token
from .sources import (
    LogitSource,
    OmniPayload,
    PromptInput,
    Session,
    require_compatible,
)


@dataclass(frozen=True)
class DecodeJob:
    """A complete description of one guided generation run.

    neg_payload is normally None (the negative branch sees text only); a
    payload here reproduces ablations whose contrast branch re-processes
    the omni input. think_tag tokens are appended to the guide branch's
    prompt only.
    """

    base_source: LogitSource
    prompt: PromptInput
    guide_source: LogitSource | None = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    max_new_tokens: int = 4096
    stop_tokens: frozenset[int] = frozenset()
    think_tag: tuple[int, ...] = ()
    neg_payload: OmniPayload | None = None

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")

    @property
    def branches(self) -> tuple[str, ...]:
        return STRATEGY_BRANCHES[self.guidance.strategy]


@dataclass
class DecodeResult:
    tokens: tuple[int, ...]
    text: str
    finish_reason: str  # stop_token | length_limit | error
    traces: list[StepTrace]
    prefill_s: float = 0.0
    generate_s: float = 0.0
    mean_step_s: float = 0.0
    branch_prefill_s: dict = field(default_factory=dict)
    branch_generate_s: dict = field(default_factory=dict)
    error: str | None = None


def _validate_job(job: DecodeJob) -> None:
    if not job.prompt.tokens:
        raise ValueError("prompt must contain at least one token")
    needs_guide = "guide" in job.branches
    if needs_guide and job.guide_source is None:
        raise ValueError(
            f"strategy {job.guidance.strategy!r} needs a guide source and none was given"
        )
    if job.guide_source is not None:
        require_compatible(
            job.base_source.vocabulary,
            job.guide_source.vocabulary,
            context="base vs guide",
        )


def _branch_prompts(job: DecodeJob) -> dict[str, tuple[LogitSource, PromptInput]]:
    prompts: dict[str, tuple[LogitSource, PromptInput]] = {}
    for name in job.branches:
        if name == "base":
            prompts[name] = (job.base_source, job.prompt)
        elif name == "neg":
            prompts[name] = (
                job.base_source,
                PromptInput(tokens=job.prompt.tokens, payload=job.neg_payload),
            )
        else:  # guide
            assert job.guide_source is not None
            prompts[name] = (
                job.guide_source,
                PromptInput(tokens=job.prompt.tokens + tuple(job.think_tag)),
            )
    return prompts


def _fuse(job: DecodeJob, z: dict[str, np.ndarray], t: int):
    """Fused logits plus the (alpha_r, alpha_p, d_r, d_p) trace tuple."""
    g = job.guidance
    if g.strategy == "none":
        return z["base"], (0.0, 0.0, 0.0, 0.0)
    if g.strategy in ("fixed_contrast", "lrm_guide_fixed"):
        fused = lrm_guide_fixed(z["base"], z["guide"], z["neg"], g.alpha)
        return fused, (g.alpha, 0.0, 0.0, 0.0)
    if g.strategy == "vcd_ablation":
        fused = vcd_ablation_mix(z["base"], z["neg"], g.alpha)
        return fused, (g.alpha, 0.0, 0.0, 0.0)
    if g.strategy == "average_fusion":
        return average_fusion(z["base"], z["guide"]), (0.0, 0.0, 0.0, 0.0)
    fused, w = stepwise_fuse(z["base"], z["guide"], z["neg"], t, g)
    return fused, (w.alpha_r, w.alpha_p, w.d_r, w.d_p)


def _timed_logits(session: Session) -> tuple[np.ndarray, float]:
    t0 = time.perf_counter()
    z = session.logits()
    return z, time.perf_counter() - t0


def _timed_step(session: Session, token: int) -> tuple[np.ndarray, float]:
    t0 = time.perf_counter()
    z = session.step(token)
    return z, time.perf_counter() - t0


def _gather(pool, work: dict):
    """Run branch calls concurrently and join before returning."""
    if len(work) == 1:
        name, fn = next(iter(work.items()))
        return {name: fn()}
    futures = {name: pool.submit(fn) for name, fn in work.items()}
    return {name: fut.result() for name, fut in futures.items()}


def decode(job: DecodeJob, *, stage: str | None = None, rng=None) -> DecodeResult:
    """Run one guided generation job to a stop token, the length limit, or error.

    Branch transport or lifecycle failures mid-run abort the job and return
    a partial result with finish_reason "error"; precondition violations
    (missing guide, vocabulary mismatch, empty prompt) raise before any
    session opens. A caller-supplied rng overrides the sampler seed, which
    lets multi-stage pipelines share one stream.
    """
    _validate_job(job)
    vocab = job.base_source.vocabulary
    prompts = _branch_prompts(job)
    if rng is None:
        rng = make_rng(job.sampler)

    sessions: dict[str, Session] = {}
    tokens: list[int] = []
    traces: list[StepTrace] = []
    finish = "length_limit"
    error_msg: str | None = None
    branch_prefill: dict[str, float] = {}
    branch_generate: dict[str, float] = dict.fromkeys(job.branches, 0.0)
    step_intervals: list[float] = []

    t_start = time.perf_counter()
    prefill_s = 0.0
    pool = ThreadPoolExecutor(max_workers=max(len(job.branches), 1))
    try:
        try:
            def _open(src: LogitSource, prompt: PromptInput):
                t0 = time.perf_counter()
                sess = src.open(prompt)
                z = sess.logits()
                return sess, z, time.perf_counter() - t0

            opened = _gather(
                pool, {name: (lambda sp=sp: _open(*sp)) for name, sp in prompts.items()}
            )
            z: dict[str, np.ndarray] = {}
            lat: dict[str, float] = {}
            for name, (sess, logits, dt) in opened.items():
                sessions[name] = sess
                z[name] = logits
                lat[name] = dt
                branch_prefill[name] = dt

            history = list(job.prompt.tokens) if job.sampler.penalize_prompt else []
            t_prev = None
            for t in range(1, job.max_new_tokens + 1):
                fused, (alpha_r, alpha_p, d_r, d_p) = _fuse(job, z, t)
                token = sample_token(fused, history, job.sampler, rng)
                tokens.append(token)
                history.append(token)
                now = time.perf_counter()
                if t == 1:
                    prefill_s = now - t_start
                else:
                    step_intervals.append(now - t_prev)
                t_prev = now
                traces.append(
                    StepTrace(
                        t=t,
                        token_id=token,
                        token=vocab.tokens[token],
                        alpha_r=alpha_r,
                        alpha_p=alpha_p,
                        d_r=d_r,
                        d_p=d_p,
                        lat_base_ms=lat.get("base", 0.0) * 1e3,
                        lat_neg_ms=lat.get("neg", 0.0) * 1e3,
                        lat_guide_ms=lat.get("guide", 0.0) * 1e3,
                        stage=stage,
                    )
                )
                if token in job.stop_tokens:
                    finish = "stop_token"
                    break
                if t == job.max_new_tokens:
                    finish = "length_limit"
                    break
                stepped = _gather(
                    pool,
                    {
                        name: (lambda s=sess, tok=token: _timed_step(s, tok))
                        for name, sess in sessions.items()
                    },
                )
                for name, (logits, dt) in stepped.items():
                    z[name] = logits
                    lat[name] = dt
                    branch_generate[name] += dt
        except EngineError as exc:
            finish = "error"
            error_msg = f"{type(exc).__name__}: {exc}"
    finally:
        for sess in sessions.values():
            try:
                sess.close()
            except Exception:
                pass
        pool.shutdown(wait=False)

    total = time.perf_counter() - t_start
    if finish == "error" and not tokens:
        prefill_s = total
    generate_s = max(total - prefill_s, 0.0)
    mean_step_s = float(np.mean(step_intervals)) if step_intervals else 0.0
    return DecodeResult(
        tokens=tuple(tokens),
        text=" ".join(vocab.tokens[t] for t in tokens),
        finish_reason=finish,
        traces=traces,
        prefill_s=prefill_s,
        generate_s=generate_s,
        mean_step_s=mean_step_s,
        branch_prefill_s=branch_prefill,
        branch_generate_s=branch_generate,
        error=error_msg,
    )


def caption_then_answer(job: DecodeJob) -> DecodeResult:
    """Two-stage pipeline baseline: describe the payload, then answer from text.

    Stage 1 decodes a caption from the base source alone (payload attached,
    no guidance). Stage 2 hands the stop-token-stripped caption plus the
    original question text to the guide source and decodes the answer, again
    without guidance. The information path is one-way: whatever the caption
    fails to express is lost to the answering model.
    """
    if job.guide_source is None:
        raise ValueError("caption_then_answer needs both a base and a guide source")
    require_compatible(
        job.base_source.vocabulary, job.guide_source.vocabulary, context="base vs guide"
    )
    rng = make_rng(job.sampler)

    caption_job = replace(job, guide_source=None, guidance=GuidanceConfig(strategy="none"))
    stage1 = decode(caption_job, stage="caption", rng=rng)
    if stage1.finish_reason == "error":
        return stage1

    caption_tokens = tuple(t for t in stage1.tokens if t not in job.stop_tokens)
    answer_prompt = PromptInput(
        tokens=caption_tokens + tuple(job.prompt.tokens) + tuple(job.think_tag)
    )
    answer_job = replace(
        job,
        base_source=job.guide_source,
        guide_source=None,
        prompt=answer_prompt,
        guidance=GuidanceConfig(strategy="none"),
        neg_payload=None,
        think_tag=(),
    )
    stage2 = decode(answer_job, stage="answer", rng=rng)

    return DecodeResult(
        tokens=stage2.tokens,
        text=stage2.text,
        finish_reason=stage2.finish_reason,
        traces=stage1.traces + stage2.traces,
        prefill_s=stage1.prefill_s + stage2.prefill_s,
        generate_s=stage1.generate_s + stage2.generate_s,
        mean_step_s=stage2.mean_step_s,
        branch_prefill_s={"caption": stage1.prefill_s, "answer": stage2.prefill_s},
        branch_generate_s={"caption": stage1.generate_s, "answer": stage2.generate_s},
        error=stage2.error,
    )


@dataclass(frozen=True)
class BenchRow:
    name: str
    strategy: str
    prefill_s: float
    mean_step_s: float
    prefill_ratio: float
    step_ratio: float


@dataclass
class BenchReport:
    baseline: str
    repetitions: int
    rows: list[BenchRow]

    def format_table(self) -> str:
        header = f"{'job':<16} {'strategy':<16} {'prefill':>12} {'per-step':>12} {'prefill x':>10} {'step x':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.name:<16} {r.strategy:<16} {r.prefill_s * 1e3:>10.2f}ms {r.mean_step_s * 1e3:>10.2f}ms"
                f" {r.prefill_ratio:>9.2f}x {r.step_ratio:>7.2f}x"
            )
        lines.append(f"(means over {self.repetitions} repetition(s); baseline: {self.baseline})")
        return "\n".join(lines)


def bench(jobs: dict[str, DecodeJob], repetitions: int = 1) -> BenchReport:
    """Time each job and report prefill / per-step means and ratios.

    jobs maps row names to fully configured DecodeJobs; exactly the rows
    given are run, and one of them must use the plain strategy "none" to
    serve as the ratio baseline (the first such row by insertion order).
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not jobs:
        raise ValueError("bench needs at least one job")
    baseline_name = next(
        (name for name, job in jobs.items() if job.guidance.strategy == "none"), None
    )
    if baseline_name is None:
        raise ValueError("bench needs a strategy 'none' job as the ratio baseline")

    means: dict[str, tuple[float, float]] = {}
    for name, job in jobs.items():
        prefills, steps = [], []
        for _ in range(repetitions):
            res = decode(job)
            if res.finish_reason == "error":
                raise EngineError(f"bench job {name!r} failed: {res.error}")
            prefills.append(res.prefill_s)
            steps.append(res.mean_step_s)
        means[name] = (float(np.mean(prefills)), float(np.mean(steps)))

    base_prefill, base_step = means[baseline_name]
    rows = [
        BenchRow(
            name=name,
            strategy=jobs[name].guidance.strategy,
            prefill_s=p,
            mean_step_s=s,
            prefill_ratio=p / base_prefill if base_prefill > 0 else float("nan"),
            step_ratio=s / base_step if base_step > 0 else float("nan"),
        )
        for name, (p, s) in means.items()
    ]
    return BenchReport(baseline=baseline_name, repetitions=repetitions, rows=rows)
