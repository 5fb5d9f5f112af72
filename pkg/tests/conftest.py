"""Shared fixtures: tiny synthetic corpora sized for fast unit tests."""

import numpy as np
import pytest

from flynet import data as datapipe
from flynet import synth


@pytest.fixture(scope="session")
def tiny_corpus():
    """Nine 32px datasets (three per stage), eight frames each."""
    return synth.make_corpus(3, 8, 32, seed=71)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tiny_corpus, tmp_path_factory):
    """The tiny corpus saved to disk; returns the manifest path."""
    out = tmp_path_factory.mktemp("corpus")
    return datapipe.save_corpus(tiny_corpus, out)


def stub_dataset(ds_id: str, stage: str) -> datapipe.FlyDataset:
    """A frameless dataset, enough for split-logic tests."""
    return datapipe.FlyDataset(ds_id, stage, 25.0, [])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
