"""Shared fixtures: the fusion testbed tables and random toy-model factories."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from omniguide import OmniPayload, PromptInput, ToyModel, parse_toy_spec

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"

# The demo testbed, also shipped under configs/. Vocabulary:
#   0 what  1 metal  2 plastic  3 sinks  4 floats  5 <eos>  6 <think>
FUSION_BASE_SPEC = (CONFIG_DIR / "fusion_base.toy").read_text()
FUSION_GUIDE_SPEC = (CONFIG_DIR / "fusion_guide.toy").read_text()

WHAT, METAL, PLASTIC, SINKS, FLOATS, EOS, THINK = range(7)


@pytest.fixture()
def fusion_base() -> ToyModel:
    return parse_toy_spec(FUSION_BASE_SPEC, name="fusion-base")


@pytest.fixture()
def fusion_guide() -> ToyModel:
    return parse_toy_spec(FUSION_GUIDE_SPEC, name="fusion-guide")


def scene_payload(key: str, pad: int = 64) -> OmniPayload:
    return OmniPayload(data=key.encode() + b" " + bytes(pad))


def scene_prompt(key: str | None = None) -> PromptInput:
    payload = scene_payload(key) if key else None
    return PromptInput(tokens=(WHAT,), payload=payload)


def random_dist(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.dirichlet(np.ones(size))


def random_toy_spec(rng: np.random.Generator, vocab_size: int = 8) -> str:
    """A random but well-formed toy model over tokens t0..t{V-1}.

    Rules cover a sample of 1- and 2-token contexts with two scored
    continuations each, plus one omni table, so random decodes exercise
    both matched and fallback (uniform-zero) contexts.
    """
    tokens = [f"t{i}" for i in range(vocab_size)]
    lines = [f"@vocab {' '.join(tokens)}", "@context_limit 128"]
    n_rules = int(rng.integers(4, 10))
    for _ in range(n_rules):
        ctx_len = int(rng.integers(1, 3))
        ctx = " ".join(rng.choice(tokens, size=ctx_len))
        for tok in rng.choice(tokens, size=2, replace=False):
            score = float(rng.uniform(-3.0, 3.0))
            lines.append(f"{ctx} | {tok} | {score:.6f}")
    lines.append("@omni blob")
    ctx = str(rng.choice(tokens))
    tok = str(rng.choice(tokens))
    lines.append(f"{ctx} | {tok} | {float(rng.uniform(0.5, 4.0)):.6f}")
    return "\n".join(lines) + "\n"


def random_toy_model(rng: np.random.Generator, vocab_size: int = 8) -> ToyModel:
    return parse_toy_spec(random_toy_spec(rng, vocab_size))


def random_prompt(rng: np.random.Generator, vocab_size: int, max_len: int = 6) -> tuple[int, ...]:
    length = int(rng.integers(1, max_len + 1))
    return tuple(int(t) for t in rng.integers(0, vocab_size, size=length))
