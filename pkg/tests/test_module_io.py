import numpy as np
import pytest

from conftest import random_module

from metagp.exceptions import (ChecksumMismatch, IncompatibleModules,
                               InvariantViolation, UnknownSchemaVersion)
from metagp.module_io import (canonical_module_text, fnv1a64, load_module,
                              save_module, validate_dictionary)


def modules_equal_bitwise(a, b):
    def bits(arr):
        return np.asarray(arr, dtype=np.float64).tobytes()

    return (
        bits(a.Z) == bits(b.Z)
        and bits(a.q_u.mean) == bits(b.q_u.mean)
        and bits(a.q_u.cov_chol) == bits(b.q_u.cov_chol)
        and bits([a.kernel.log_variance]) == bits([b.kernel.log_variance])
        and bits(a.kernel.log_lengthscales) == bits(b.kernel.log_lengthscales)
        and a.likelihood.family == b.likelihood.family
        and bits([a.elbo_star]) == bits([b.elbo_star])
        and a.n_train == b.n_train
        and (a.likelihood.family != "gaussian"
             or bits([a.likelihood.log_noise_variance]) == bits([b.likelihood.log_noise_variance]))
    )


class TestFnv1a:
    def test_known_vectors(self):
        # reference values of 64-bit FNV-1a
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8


class TestSaveLoad:
    def test_roundtrip_bit_exact(self, rng, tmp_path):
        for family in ("gaussian", "bernoulli", "het_gaussian"):
            mod = random_module(rng, n_inducing=4, input_dim=2, family=family)
            path = tmp_path / f"{family}.gpmod"
            save_module(mod, path)
            back = load_module(path)
            assert modules_equal_bitwise(mod, back)

    def test_same_module_byte_identical_files(self, rng, tmp_path):
        mod = random_module(rng)
        p1, p2 = tmp_path / "a.gpmod", tmp_path / "b.gpmod"
        save_module(mod, p1)
        save_module(mod, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_checksum_present_and_valid(self, rng):
        text = canonical_module_text(random_module(rng))
        body, checksum_line = text.rsplit("checksum = ", 1)
        assert f"{fnv1a64(body.encode()):016x}" == checksum_line.strip()

    def test_single_byte_corruption_detected(self, rng, tmp_path):
        mod = random_module(rng)
        path = tmp_path / "m.gpmod"
        save_module(mod, path)
        raw = bytearray(path.read_bytes())
        pos = raw.index(b"mu = ") + 5
        raw[pos] = ord("7") if raw[pos] != ord("7") else ord("8")
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumMismatch):
            load_module(path)

    def test_inconsistent_z_rows_rejected(self, rng, tmp_path):
        mod = random_module(rng, n_inducing=3)
        text = canonical_module_text(mod)
        # drop one Z row, then re-stamp the checksum so only the invariant fails
        lines = text.splitlines()
        z_at = lines.index("Z =")
        del lines[z_at + 1]
        body = "\n".join(lines[:-1]) + "\n"
        body = body[: body.rfind("checksum = ")]
        body += ""
        digest = fnv1a64(body.encode())
        path = tmp_path / "bad.gpmod"
        path.write_text(body + f"checksum = {digest:016x}\n")
        with pytest.raises(InvariantViolation):
            load_module(path)

    def test_unknown_schema_version(self, rng, tmp_path):
        mod = random_module(rng)
        text = canonical_module_text(mod)
        body = text[: text.rfind("checksum = ")]
        body = body.replace("schema_version = 1", "schema_version = 99", 1)
        path = tmp_path / "v99.gpmod"
        path.write_text(body + f"checksum = {fnv1a64(body.encode()):016x}\n")
        with pytest.raises(UnknownSchemaVersion):
            load_module(path)

    def test_extreme_float_roundtrip(self, rng, tmp_path):
        mod = random_module(rng)
        mod.q_u.mean[0] = 1.7976931348623157e308
        mod.q_u.mean[1] = 5e-324
        mod.q_u.mean[2] = -1.2345678912345679e-17
        path = tmp_path / "x.gpmod"
        save_module(mod, path)
        back = load_module(path)
        assert modules_equal_bitwise(mod, back)


class TestValidateDictionary:
    def test_single_module(self, rng):
        mod = random_module(rng, elbo_star=-7.25)
        report = validate_dictionary([mod])
        assert report.n_modules == 1
        np.testing.assert_allclose(report.sum_elbo_star, -7.25)

    def test_mixed_input_dims_rejected(self, rng):
        mods = [random_module(rng, input_dim=2), random_module(rng, input_dim=3)]
        with pytest.raises(IncompatibleModules):
            validate_dictionary(mods)

    def test_sum_matches_independent_summation(self, rng):
        elbos = [-3.5, -1.25, -10.0, -0.125, -2.75]
        mods = [random_module(rng, elbo_star=e) for e in elbos]
        report = validate_dictionary(mods)
        np.testing.assert_allclose(report.sum_elbo_star, sum(elbos), atol=1e-12)
        assert [e["elbo_star"] for e in report.per_module] == elbos

    def test_order_insensitive_outcome(self, rng):
        mods = [random_module(rng) for _ in range(4)]
        report_fwd = validate_dictionary(mods)
        report_rev = validate_dictionary(mods[::-1])
        np.testing.assert_allclose(report_fwd.sum_elbo_star, report_rev.sum_elbo_star)
        mixed = [random_module(rng, input_dim=1), random_module(rng, input_dim=2)]
        for order in (mixed, mixed[::-1]):
            with pytest.raises(IncompatibleModules):
                validate_dictionary(order)

    def test_single_output_rules(self, rng):
        gauss = random_module(rng, family="gaussian")
        bern = random_module(rng, family="bernoulli")
        het = random_module(rng, family="het_gaussian")
        with pytest.raises(IncompatibleModules):
            validate_dictionary([gauss, bern], for_single_output=True)
        with pytest.raises(IncompatibleModules):
            validate_dictionary([het], for_single_output=True)
        validate_dictionary([gauss, het])  # multi-output path allows mixing
