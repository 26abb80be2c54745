import numpy as np
import pytest

from graphcl.config import load_config
from graphcl.corpus import generate_synthetic_corpus
from graphcl.model import Summarizer, collate
from graphcl.tokenizer import build_vocab
from graphcl.training import prepare_examples

TINY = {
    "d_model": "8", "text_layers": "1", "text_heads": "2", "text_ff": "16", "gat_heads": "2",
    "dec_layers": "1", "dec_heads": "2", "dec_ff": "16", "con_layers": "1", "con_heads": "2", "con_ff": "16",
    "max_source_len": "24",
}

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def corpus_vocab(records, max_size=8192):
    return build_vocab([r.words for r in records] + [r.impression_words for r in records], max_size=max_size)


def tiny_setup(seed=0, n_records=2, dtype=np.float64, **overrides):
    """A very small model and one collated batch, for gradient and behaviour checks."""
    recs = generate_synthetic_corpus(n_records, seed)
    vocab = corpus_vocab(recs, max_size=60)
    run = load_config(None, {**TINY, **{k: str(v) for k, v in overrides.items()}})
    examples = prepare_examples(recs, vocab, run)
    model = Summarizer(len(vocab), run.model, seed=seed).astype(dtype)
    return model, collate(examples, vocab), vocab, run


@pytest.fixture(scope="session")
def synth32():
    return generate_synthetic_corpus(32, 0)


@pytest.fixture(scope="session")
def tiny_model():
    return tiny_setup()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
