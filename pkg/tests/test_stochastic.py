import math

import numpy as np
import pytest
from scipy import stats

from crackfield.mesh import generate_structured_quad
from crackfield.stochastic import (
    StochasticFieldSpec,
    read_field,
    sample_field,
    weibull_cdf,
    weibull_from_uniform,
    write_field,
)

E0 = 90e9


class TestSpec:
    @pytest.mark.parametrize("kwargs", [dict(E0=0.0), dict(m=0.0), dict(n=0), dict(seed=-1),
                                        dict(seed=2**64)])
    def test_rejects(self, kwargs):
        base = dict(E0=E0, m=1.0, seed=1, n=10)
        base.update(kwargs)
        with pytest.raises(ValueError):
            StochasticFieldSpec(**base)


class TestSampling:
    def test_unit_exponent(self):
        assert weibull_from_uniform(1 - math.exp(-1), E0, 1.0) == pytest.approx(E0, rel=1e-14)
        assert weibull_from_uniform(1 - math.exp(-1), E0, 3.7) == pytest.approx(E0, rel=1e-14)

    def test_mean_over_seeds(self):
        inside = 0
        for seed in range(40):
            mean = sample_field(StochasticFieldSpec(E0, 1.0, seed, 16000)).mean()
            inside += 85e9 <= mean <= 95e9
        assert inside / 40 >= 0.95

    def test_range_order_of_magnitude(self):
        n, seeds = 16000, 200
        lo = hi = 0
        for seed in range(seeds):
            E = sample_field(StochasticFieldSpec(E0, 1.0, seed, n))
            lo += E.min() <= 1e-3 * E0
            hi += E.max() >= 10 * E0
        assert lo / seeds > 0.9
        # P(max >= 10 E0) = 1 - (1 - e^-10)^n is about 0.52, not above 0.9
        p = 1 - (1 - math.exp(-10)) ** n
        assert abs(hi / seeds - p) < 4 * math.sqrt(p * (1 - p) / seeds)

    def test_deterministic_bytes(self):
        spec = StochasticFieldSpec(E0, 1.0, 12345, 1000)
        assert sample_field(spec).tobytes() == sample_field(spec).tobytes()
        other = StochasticFieldSpec(E0, 1.0, 12346, 1000)
        assert sample_field(spec).tobytes() != sample_field(other).tobytes()

    @pytest.mark.parametrize("m", [1.0, 2.5])
    def test_ks(self, m):
        E = sample_field(StochasticFieldSpec(E0, m, 7, 100_000))
        res = stats.kstest(E, lambda x: weibull_cdf(x, E0, m))
        # 1% critical value for large n
        assert res.statistic < 1.628 / math.sqrt(E.size)
        assert np.all(E > 0)


class TestFieldIO:
    def test_round_trip_into_mesh(self, tmp_path):
        mesh = generate_structured_quad(1.0, 1.0, 4, 4)
        E = sample_field(StochasticFieldSpec(E0, 1.0, 3, mesh.n_elements))
        path = tmp_path / "E.txt"
        write_field(path, E)
        back = read_field(path)
        np.testing.assert_array_equal(back, E)
        assert np.array_equal(mesh.with_modulus(back).elem_modulus, E)
        assert len(path.read_text().splitlines()) == mesh.n_elements
