import numpy as np
import pytest

from codedreduce.codes import EncodingMatrix


@pytest.fixture
def reference_b() -> EncodingMatrix:
    """The (3, 1) code used throughout the worked examples."""
    return EncodingMatrix(
        n=3, s=1, entries=np.array([[0.5, 1.0, 0.0], [0.0, 1.0, -1.0], [0.5, 0.0, 1.0]])
    )


def identity_oracle_for(d: int):
    """Gradient oracle where each point's gradient is its own indicator
    vector, so any exact aggregate is the all-ones vector of length d."""

    def oracle(_theta, slices):
        out = np.zeros(d)
        for s in slices:
            out[s.start : s.stop] += s.weight
        return out

    return oracle
