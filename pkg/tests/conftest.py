import shutil
import tempfile
from pathlib import Path

import pytest

from ecgtalk.corpus import build_corpus, load_corpus
from ecgtalk.records import LeadConfig
from ecgtalk.synth import synthesize_ecg


@pytest.fixture(scope="session")
def sinus_record_75():
    record, fiducials = synthesize_ecg(75, 10, 500, 0.0, seed=0)
    return record, fiducials


@pytest.fixture(scope="session")
def corpus_dir():
    """A small templated corpus shared by evaluation/service/CLI tests."""
    tmp = Path(tempfile.mkdtemp(prefix="ecgtalk-corpus-"))
    build_corpus(24, LeadConfig.LEAD_II, seed=42, out_dir=tmp)
    yield tmp
    shutil.rmtree(tmp, ignore_errors=True)


@pytest.fixture(scope="session")
def corpus_dialogues(corpus_dir):
    return load_corpus(corpus_dir / "dialogues.jsonl")
