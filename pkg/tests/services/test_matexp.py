"""Tests for the matrix exponential engines."""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from cmemh.core.config import Settings
from cmemh.core.errors import GeneratorBudgetError, StateDomainError
from cmemh.models.expm import ExpmMethod, ExpmTag
from cmemh.services.cme_operator import build_exact_generator
from cmemh.services.matexp import (
    ExpmEngine,
    arnoldi,
    contour_nodes,
    expm_contour_apply,
    expm_cram_apply,
    expm_element,
    expm_krylov_apply,
    expm_pade,
)
from tests.conftest import banded_generator

if TYPE_CHECKING:
    from pytest_mock import MockerFixture

    from cmemh.models.reaction_system import ReactionSystem


def _two_state_column(k1: float, k2: float, t: float) -> tuple[float, float]:
    """exp(tA) e_1 for the chain 1 -> 2 at rate k1 and 2 -> 1 at rate k2."""
    total = k1 + k2
    decay = math.exp(-total * t)
    return (k2 + k1 * decay) / total, k1 * (1.0 - decay) / total


class TestPade:
    """Test the dense Padé approximant."""

    def test_matches_scipy(self) -> None:
        """Test agreement with scipy.linalg.expm on random generators."""
        rng = np.random.default_rng(0)
        for n in (2, 7, 30):
            a = banded_generator(n, rng, scale=20.0)
            np.testing.assert_allclose(
                expm_pade(a), scipy.linalg.expm(a), rtol=1e-11, atol=1e-13
            )

    def test_general_matrix(self) -> None:
        """Test a non-generator matrix with a large norm."""
        rng = np.random.default_rng(1)
        a = rng.normal(size=(6, 6)) * 4.0
        np.testing.assert_allclose(
            expm_pade(a), scipy.linalg.expm(a), rtol=1e-10, atol=1e-12
        )

    @pytest.mark.parametrize(("s", "t"), [(0.1, 0.3), (0.5, 0.5), (1.0, 2.5)])
    def test_semigroup(self, s: float, t: float) -> None:
        """Test exp(sA) exp(tA) = exp((s + t)A)."""
        a = banded_generator(25, np.random.default_rng(5), scale=8.0)
        np.testing.assert_allclose(
            expm_pade(s * a) @ expm_pade(t * a),
            expm_pade((s + t) * a),
            rtol=1e-10,
            atol=1e-11,
        )

    def test_zero_matrix(self) -> None:
        """Test exp(0) = I."""
        np.testing.assert_array_equal(expm_pade(np.zeros((3, 3))), np.eye(3))

    def test_scalar(self) -> None:
        """Test a 1 x 1 matrix."""
        assert expm_pade(np.array([[-3.0]]))[0, 0] == pytest.approx(math.exp(-3.0))

    def test_sparse_input(self) -> None:
        """Test sparse matrices are densified."""
        a = sp.csc_array(np.array([[-1.0, 2.0], [1.0, -2.0]]))
        np.testing.assert_allclose(
            expm_pade(a), scipy.linalg.expm(a.toarray()), rtol=1e-13
        )

    def test_non_square(self) -> None:
        """Test non-square input is rejected."""
        with pytest.raises(StateDomainError):
            expm_pade(np.zeros((2, 3)))

    def test_non_finite(self) -> None:
        """Test NaN input is rejected."""
        with pytest.raises(StateDomainError):
            expm_pade(np.array([[np.nan]]))


class TestTwoStateClosedForm:
    """Test every engine against the closed-form two-state chain."""

    K1, K2, T = 2.0, 3.0, 0.7

    @pytest.fixture
    def generator(self) -> np.ndarray:
        """Generator of the two-state chain."""
        return np.array([[-self.K1, self.K2], [self.K1, -self.K2]])

    @pytest.mark.parametrize(
        "method",
        [
            ExpmMethod(tag=ExpmTag.PADE),
            ExpmMethod(tag=ExpmTag.CONTOUR, order=16),
            ExpmMethod(tag=ExpmTag.CRAM, order=14),
            ExpmMethod(tag=ExpmTag.CRAM, order=16),
            ExpmMethod(tag=ExpmTag.KRYLOV, krylov_dim=2),
        ],
        ids=["pade", "contour", "cram14", "cram16", "krylov"],
    )
    def test_column(self, generator: np.ndarray, method: ExpmMethod) -> None:
        """Test exp(tA) e_1 against the closed form."""
        engine = ExpmEngine(method, Settings())
        column = engine.column(sp.csc_array(generator), 1, self.T)
        np.testing.assert_allclose(
            column, _two_state_column(self.K1, self.K2, self.T), atol=1e-10
        )

    def test_generator_from_system(self, two_state: ReactionSystem) -> None:
        """Test the assembled generator carries the same chain."""
        g = build_exact_generator(two_state)
        column = ExpmEngine(ExpmMethod(tag=ExpmTag.PADE), Settings()).column(
            g.matrix, 2, self.T
        )
        stay, move = _two_state_column(2.0, 3.0, self.T)
        assert column[1] == pytest.approx(stay, abs=1e-12)
        assert column[2] == pytest.approx(move, abs=1e-12)


class TestRationalApproximations:
    """Test contour and CRAM actions."""

    def test_contour_nodes_shape(self) -> None:
        """Test k residues and poles in the upper half plane."""
        residues, poles = contour_nodes(8)
        assert residues.shape == poles.shape == (8,)
        assert np.all(poles.imag > 0)

    def test_contour_scalar_accuracy(self) -> None:
        """Test the rule on exp(x) along the negative axis."""
        for x in (-0.1, -1.0, -10.0, -100.0):
            value = expm_contour_apply(np.array([[x]]), [1.0], k=16)[0]
            assert value == pytest.approx(math.exp(x), abs=1e-12)

    def test_contour_invalid_order(self) -> None:
        """Test at least one solve."""
        with pytest.raises(StateDomainError):
            contour_nodes(0)

    def test_cram_invalid_order(self) -> None:
        """Test only tabulated degrees are available."""
        with pytest.raises(StateDomainError, match="CRAM order"):
            expm_cram_apply(np.eye(2) * -1.0, [1.0, 0.0], k=12)

    def test_zero_vector(self) -> None:
        """Test exp(tA) 0 = 0 without solving."""
        result = expm_contour_apply(-np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(result, np.zeros(3))

    def test_gmres_path(self) -> None:
        """Test the iterative solver above the direct-solve limit."""
        a = sp.csc_array(banded_generator(40, np.random.default_rng(3)))
        b = np.zeros(40)
        b[20] = 1.0
        direct = expm_contour_apply(a, b, k=16, direct_solve_limit=1000)
        iterative = expm_contour_apply(a, b, k=16, direct_solve_limit=1)
        np.testing.assert_allclose(iterative, direct, atol=1e-10)

    def test_dense_and_sparse_agree(self) -> None:
        """Test dense input uses dense solves with the same result."""
        a = banded_generator(15, np.random.default_rng(4))
        b = np.linspace(0.0, 1.0, 15)
        np.testing.assert_allclose(
            expm_cram_apply(a, b, k=16),
            expm_cram_apply(sp.csc_array(a), b, k=16),
            atol=1e-13,
        )


class TestArnoldi:
    """Test the Arnoldi factorization."""

    def test_relation(self) -> None:
        """Test A V = V H + h v e_m^T and orthonormal V."""
        rng = np.random.default_rng(5)
        a = banded_generator(50, rng)
        b = rng.uniform(size=50)
        fac = arnoldi(a, b, 10)
        assert fac.dim == 10
        np.testing.assert_allclose(fac.V.T @ fac.V, np.eye(10), atol=1e-12)
        residual = a @ fac.V - fac.V @ fac.H
        # only the last column carries the h_next term
        np.testing.assert_allclose(residual[:, :-1], 0.0, atol=1e-10)
        assert np.linalg.norm(residual[:, -1]) == pytest.approx(fac.h_next, rel=1e-8)
        assert fac.beta == pytest.approx(float(np.linalg.norm(b)))

    def test_breakdown_on_invariant_subspace(self) -> None:
        """Test an eigenvector start stops after one step."""
        fac = arnoldi(-2.0 * np.eye(6), np.ones(6), 4)
        assert fac.breakdown_at == 1
        assert fac.dim == 1
        assert fac.H[0, 0] == pytest.approx(-2.0)

    def test_dimension_capped(self) -> None:
        """Test m larger than n is capped."""
        fac = arnoldi(banded_generator(5, np.random.default_rng(6)), np.ones(5), 30)
        assert fac.dim <= 5

    def test_zero_start(self) -> None:
        """Test a zero start vector is rejected."""
        with pytest.raises(StateDomainError):
            arnoldi(np.eye(3), np.zeros(3), 2)


class TestKrylov:
    """Test the Krylov action and element."""

    def test_full_dimension_is_exact(self) -> None:
        """Test m = n reproduces the dense exponential."""
        rng = np.random.default_rng(7)
        a = banded_generator(25, rng)
        b = rng.uniform(size=25)
        np.testing.assert_allclose(
            expm_krylov_apply(a, b, m=25, t=0.8),
            scipy.linalg.expm(0.8 * a) @ b,
            atol=1e-11,
        )

    def test_substepping_with_small_space(self) -> None:
        """Test a small m still reaches the tolerance by time stepping."""
        a = sp.csc_array(banded_generator(200, np.random.default_rng(8), scale=10.0))
        b = np.zeros(200)
        b[100] = 1.0
        expected = scipy.linalg.expm(2.0 * a.toarray()) @ b
        result = expm_krylov_apply(a, b, m=12, t=2.0, tol=1e-12)
        np.testing.assert_allclose(result, expected, atol=1e-9)

    def test_zero_time(self) -> None:
        """Test exp(0 A) b = b."""
        b = np.array([0.25, 0.75])
        np.testing.assert_array_equal(
            expm_krylov_apply(-np.eye(2), b, m=2, t=0.0), b
        )

    def test_zero_start(self) -> None:
        """Test the Krylov action needs a nonzero vector."""
        with pytest.raises(StateDomainError):
            expm_krylov_apply(-np.eye(2), np.zeros(2))

    def test_element_matches_dense(self) -> None:
        """Test [exp(tA)]_ij against the dense matrix."""
        rng = np.random.default_rng(9)
        a = banded_generator(30, rng)
        dense = scipy.linalg.expm(0.5 * a)
        for i, j in ((1, 1), (5, 4), (17, 20), (30, 28)):
            value = expm_element(a, i, j, m=30, t=0.5)
            assert value == pytest.approx(dense[i - 1, j - 1], abs=1e-10)

    def test_element_out_of_range(self) -> None:
        """Test 1-based bounds."""
        with pytest.raises(StateDomainError):
            expm_element(-np.eye(3), 0, 1)

    def test_probability_mode_clips(
        self, mocker: MockerFixture, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Test results outside [0, 1] are clipped with a warning."""
        mocker.patch(
            "cmemh.services.matexp._krylov_propagate",
            return_value=np.array([1.2, -0.3, 0.1]),
        )
        with caplog.at_level(logging.WARNING, logger="cmemh.services.matexp"):
            result = expm_krylov_apply(-np.eye(3), [1.0, 0.0, 0.0], probability=True)
        np.testing.assert_array_equal(result, [1.0, 0.0, 0.1])
        assert "clipping" in caplog.text

    def test_probability_mode_quiet_for_round_off(
        self, mocker: MockerFixture, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Test tiny excursions are clipped silently."""
        mocker.patch(
            "cmemh.services.matexp._krylov_propagate",
            return_value=np.array([1.0 + 1e-13, -1e-14]),
        )
        with caplog.at_level(logging.WARNING, logger="cmemh.services.matexp"):
            result = expm_krylov_apply(-np.eye(2), [1.0, 0.0], probability=True)
        np.testing.assert_array_equal(result, [1.0, 0.0])
        assert caplog.text == ""


class TestEngineAgreement:
    """Cross-check the four engines on random banded generators."""

    def test_pairwise_agreement(self) -> None:
        """Test max elementwise difference <= 1e-8 over 20 generators."""
        rng = np.random.default_rng(2024)
        settings = Settings()
        methods = [
            ExpmMethod(tag=ExpmTag.PADE),
            ExpmMethod(tag=ExpmTag.CONTOUR, order=16),
            ExpmMethod(tag=ExpmTag.CRAM, order=16),
        ]
        for _ in range(20):
            n = int(rng.integers(5, 101))
            a = sp.csc_array(banded_generator(n, rng))
            j = int(rng.integers(1, n + 1))
            krylov = ExpmMethod(tag=ExpmTag.KRYLOV, krylov_dim=n)
            columns = [
                ExpmEngine(method, settings).column(a, j, 1.0)
                for method in [*methods, krylov]
            ]
            for first in columns:
                for second in columns:
                    assert np.max(np.abs(first - second)) <= 1e-8

    def test_probability_vectors(self) -> None:
        """Test columns sum to 1 with entries in [0, 1] for every engine."""
        rng = np.random.default_rng(77)
        settings = Settings()
        a = sp.csc_array(banded_generator(60, rng))
        for method in (
            ExpmMethod(tag=ExpmTag.PADE),
            ExpmMethod(tag=ExpmTag.CONTOUR),
            ExpmMethod(tag=ExpmTag.CRAM, order=14),
            ExpmMethod(tag=ExpmTag.KRYLOV),
        ):
            column = ExpmEngine(method, settings).column(a, 30, 0.5)
            assert float(column.sum()) == pytest.approx(1.0, abs=1e-10)
            assert column.min() >= -1e-10
            assert column.max() <= 1.0 + 1e-10


class TestExpmEngine:
    """Test backend dispatch."""

    def test_dense_limit(self) -> None:
        """Test Padé refuses matrices above the dense limit."""
        engine = ExpmEngine(ExpmMethod(tag=ExpmTag.PADE), Settings(dense_limit=5))
        with pytest.raises(GeneratorBudgetError, match="dense limit"):
            engine.apply(-np.eye(6), np.ones(6))

    def test_element_uses_column(self) -> None:
        """Test element() agrees with column() for non-Krylov engines."""
        a = banded_generator(10, np.random.default_rng(10))
        engine = ExpmEngine(ExpmMethod(tag=ExpmTag.CRAM, order=16), Settings())
        assert engine.element(a, 3, 5, 0.3) == pytest.approx(
            engine.column(a, 5, 0.3)[2], abs=1e-15
        )

    def test_column_out_of_range(self) -> None:
        """Test 1-based column bounds."""
        with pytest.raises(StateDomainError):
            ExpmEngine(settings=Settings()).column(-np.eye(2), 3)

    def test_default_is_contour(self) -> None:
        """Test the default backend."""
        assert ExpmEngine(settings=Settings()).tag is ExpmTag.CONTOUR
