import itertools

import numpy as np
import pytest

import codedreduce.codes as codes
from codedreduce.codes import (
    CodeConstructionError,
    DecodeError,
    EncodingMatrix,
    build_encoding,
    decode_row,
    find_decode_failure,
    load_matrix_csv,
    save_matrix_csv,
    validate_code,
)


def test_reference_decode_rows_match_known_solutions(reference_b):
    # |F| = n - s makes the solution unique, so coefficients are pinned.
    for survivors, expected in [
        ((1, 2), [0.0, 1.0, 2.0]),
        ((0, 2), [1.0, 0.0, 1.0]),
        ((0, 1), [2.0, -1.0, 0.0]),
    ]:
        row = decode_row(reference_b, survivors)
        np.testing.assert_allclose(row.coefficients, expected, atol=1e-9)
        np.testing.assert_allclose(
            row.coefficients @ reference_b.entries, np.ones(3), atol=1e-9
        )
        assert row.survivor_set == frozenset(survivors)


def test_identity_code_decodes_with_all_workers():
    B = build_encoding(3, 0, seed=0)
    np.testing.assert_array_equal(B.entries, np.eye(3))
    row = decode_row(B, [0, 1, 2])
    np.testing.assert_allclose(row.coefficients, np.ones(3), atol=1e-12)


def test_validate_reference_code(reference_b):
    assert validate_code(reference_b)


def test_identity_claimed_with_tolerance_is_invalid():
    fake = EncodingMatrix(n=3, s=1, entries=np.eye(3))
    assert not validate_code(fake)
    failure = find_decode_failure(fake)
    assert failure is not None
    survivors, residual = failure
    assert survivors == frozenset({0, 1})  # first failing set in scan order
    assert residual > codes.DECODE_TOL
    # survivors {1, 2} cannot produce the partition-0 coefficient either
    with pytest.raises(DecodeError):
        decode_row(fake, [1, 2])


def test_decode_error_names_offending_set():
    fake = EncodingMatrix(n=3, s=1, entries=np.eye(3))
    with pytest.raises(DecodeError) as err:
        decode_row(fake, [1, 2])
    assert err.value.survivors == frozenset({1, 2})


def test_construction_support_pattern():
    B = build_encoding(3, 1, seed=7)
    nonzero = {(i, j) for i in range(3) for j in range(3) if B.entries[i, j] != 0}
    assert nonzero == {(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 0)}
    assert validate_code(B)


@pytest.mark.parametrize("n,s", [(4, 1), (5, 2), (8, 3), (12, 3)])
def test_generated_codes_decode_every_survivor_set(n, s):
    B = build_encoding(n, s, seed=3)
    for F in itertools.combinations(range(n), n - s):
        row = decode_row(B, F)
        resid = np.max(np.abs(row.coefficients @ B.entries - 1.0))
        assert resid <= 1e-8
        assert np.all(row.coefficients[[i for i in range(n) if i not in F]] == 0)


@pytest.mark.parametrize("n,s", [(4, 1), (6, 2), (9, 4)])
def test_column_redundancy_is_s_plus_1(n, s):
    B = build_encoding(n, s, seed=11)
    counts = (B.entries != 0).sum(axis=0)
    assert np.all(counts == s + 1)


def test_oversized_survivor_set_uses_min_norm_solution(reference_b):
    row = decode_row(reference_b, [0, 1, 2])
    np.testing.assert_allclose(
        row.coefficients @ reference_b.entries, np.ones(3), atol=1e-9
    )
    unique = decode_row(reference_b, [0, 1])
    assert np.linalg.norm(row.coefficients) <= np.linalg.norm(unique.coefficients) + 1e-12


def test_decode_is_deterministic(reference_b):
    a = decode_row(reference_b, [0, 2]).coefficients
    b = decode_row(reference_b, [0, 2]).coefficients
    np.testing.assert_array_equal(a, b)


def test_build_is_deterministic():
    np.testing.assert_array_equal(
        build_encoding(7, 2, seed=19).entries, build_encoding(7, 2, seed=19).entries
    )


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        build_encoding(3, 3, seed=0)
    with pytest.raises(ValueError):
        decode_row(build_encoding(4, 1, seed=0), [0, 1, 2, 9])
    with pytest.raises(ValueError):
        decode_row(build_encoding(4, 1, seed=0), [0, 1])  # below n - s


def test_support_violation_rejected_by_constructor():
    dense = np.ones((3, 3))
    with pytest.raises(ValueError, match="support"):
        EncodingMatrix(n=3, s=1, entries=dense)


def test_gives_up_after_eight_attempts(monkeypatch):
    calls = []

    def always_singular(n, s, seed):
        calls.append(seed)
        raise np.linalg.LinAlgError("forced")

    monkeypatch.setattr(codes, "_try_build", always_singular)
    with pytest.raises(CodeConstructionError):
        build_encoding(5, 2, seed=100)
    assert calls == [100 + k for k in range(8)]


def test_csv_round_trip(tmp_path, reference_b):
    path = tmp_path / "code.csv"
    save_matrix_csv(reference_b, path)
    loaded = load_matrix_csv(path)
    assert (loaded.n, loaded.s) == (3, 1)
    np.testing.assert_array_equal(loaded.entries, reference_b.entries)
