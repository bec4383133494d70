import numpy as np
import pytest

from bilex.corpus import EmbeddingSpace, Vocabulary


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def space_from(matrix, words=None, normalized=False):
    matrix = np.asarray(matrix, dtype=np.float64)
    n, d = matrix.shape
    words = words or [f"w{i}" for i in range(n)]
    return EmbeddingSpace(
        vocab=Vocabulary.from_words(list(words)),
        matrix=matrix,
        dim=d,
        normalized=normalized,
    )


def unit_space(matrix, words=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return space_from(matrix / norms, words, normalized=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
