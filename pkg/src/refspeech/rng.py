"""Named random substreams derived from one root seed."""

import hashlib

import numpy as np


def _label_key(label):
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def seed_sequence(seed, label=""):
    """SeedSequence for ``label`` under root ``seed``.

    Different labels give statistically independent streams; the same
    (seed, label) pair always gives the same stream.
    """
    return np.random.SeedSequence(int(seed), spawn_key=_label_key(label))


def derive_rng(seed, label=""):
    return np.random.default_rng(seed_sequence(seed, label))


def derive_seed(seed, label):
    """Integer seed for components that take a plain int."""
    return int(seed_sequence(seed, label).generate_state(1, dtype=np.uint32)[0])
