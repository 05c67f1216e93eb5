import hashlib
import struct
import zlib

import numpy as np
import pytest

from lsno.data.burgers import BurgersSpec, field_from_coefficients, grf_coefficients, solve_burgers
from lsno.data.dataset import Dataset, Sample
from lsno.data.generate import burgers_initial, gen_burgers, gen_spirals, spec_from_dataset, spiral_z0
from lsno.data.io import (
    dataset_bytes,
    export_raw,
    import_external,
    load_dataset,
    parse_descriptor,
    save_dataset,
)
from lsno.data.spirals import IEKernelSpec, ie_residual, kernel_matrix, solve_ie
from lsno.errors import ConvergenceError, DimensionError, FormatError, IngestionError, ParameterError
from lsno.grid import SpaceTimeGrid


@pytest.fixture(scope="module")
def spirals():
    return gen_spirals(4, seed=3)


@pytest.fixture(scope="module")
def burgers():
    return gen_burgers(3, BurgersSpec(64, 11), seed=5)


class TestIntegralEquation:
    def test_initial_value(self):
        z0 = np.array([0.7, -1.2])
        y = solve_ie(z0)
        np.testing.assert_allclose(y[0], z0 + [1.0, -1.0], atol=1e-15)

    def test_kernel_entries(self):
        a = kernel_matrix(np.array(0.25))
        np.testing.assert_allclose(a, [[0.0, -1.0], [-1.0, 0.0]], atol=1e-15)

    def test_successive_distances_decrease(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            history = []
            solve_ie(rng.uniform(-2, 2, 2), history=history)
            tail = history[3:]
            assert all(b < a for a, b in zip(tail, tail[1:]))

    def test_residual_self_check(self):
        spec = IEKernelSpec()
        for z0 in np.random.default_rng(1).uniform(-2, 2, (10, 2)):
            assert ie_residual(solve_ie(z0, spec), z0, spec) <= 10 * spec.tol

    def test_residual_against_naive_quadrature(self):
        # independent oracle: explicit trapezoid sum per node
        spec = IEKernelSpec(n_time=30)
        z0 = np.array([0.3, 0.9])
        y = solve_ie(z0, spec)
        t = spec.t
        h = t[1] - t[0]
        for j in (0, 7, 29):
            acc = np.zeros(2)
            for l in range(j + 1):
                w = 0.0 if j == 0 else (h / 2 if l in (0, j) else h)
                acc += w * kernel_matrix(np.array(t[j] - t[l])) @ np.tanh(2 * np.pi * y[l])
            expected = acc + z0 + [np.cos(t[j]), np.cos(t[j] + np.pi)]
            np.testing.assert_allclose(y[j], expected, atol=1e-8)

    def test_convergence_error(self):
        with pytest.raises(ConvergenceError) as info:
            solve_ie([0.5, 0.5], IEKernelSpec(max_iter=2))
        assert info.value.residual > 0

    def test_invalid_spec(self):
        with pytest.raises(ParameterError):
            IEKernelSpec(tol=0.0)
        with pytest.raises(ParameterError):
            IEKernelSpec(z0_low=1.0, z0_high=-1.0)


class TestBurgers:
    def test_zero_stays_zero(self):
        assert not solve_burgers(np.zeros(64), BurgersSpec(64, 11)).any()

    def test_constant_preserved(self):
        u = solve_burgers(np.full(64, 0.7), BurgersSpec(64, 11))
        assert np.max(np.abs(u - 0.7)) < 1e-10

    def test_mean_conserved(self, burgers):
        means = burgers.trajectories[..., 0].mean(axis=1)
        assert np.max(np.abs(means - means[:, :1])) < 1e-8

    def test_initial_field_real(self):
        spec = BurgersSpec()
        coeffs = grf_coefficients(np.random.default_rng(0), spec)
        _, imag = field_from_coefficients(coeffs, 64, return_imag=True)
        assert imag < 1e-12

    def test_field_matches_direct_fourier_sum(self):
        spec = BurgersSpec()
        coeffs = grf_coefficients(np.random.default_rng(1), spec)
        x = np.arange(64) / 64
        m = np.arange(1, spec.cutoff + 1)
        direct = coeffs[0].real + 2 * np.sum(
            (coeffs[1:, None] * np.exp(2j * np.pi * m[:, None] * x)).real, axis=0)
        np.testing.assert_allclose(field_from_coefficients(coeffs, 64), direct, atol=1e-12)

    def test_self_convergence(self):
        spec = BurgersSpec(64, 11)
        for i in range(3):
            coarse = solve_burgers(burgers_initial(spec, 9, i), spec)
            fine_spec = spec.with_resolution(128)
            fine = solve_burgers(burgers_initial(spec, 9, i, s=128), fine_spec)
            assert np.max(np.abs(fine[::2] - coarse)) < 1e-4

    def test_power_of_two(self):
        with pytest.raises(ParameterError, match="power of two"):
            BurgersSpec(s=48)

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            solve_burgers(np.zeros(32), BurgersSpec(64))


class TestGenerators:
    def test_spirals_shape_and_determinism(self, spirals):
        again = gen_spirals(4, seed=3)
        assert dataset_bytes(spirals) == dataset_bytes(again)
        assert spirals.trajectories.shape == (4, 1, 100, 2)

    def test_count_three_identical_grids(self):
        ds = gen_spirals(3, IEKernelSpec(n_time=20), seed=0)
        assert len(ds) == 3 and len({s.target.shape for s in ds.samples}) == 1

    def test_spiral_residuals(self, spirals):
        spec = spec_from_dataset(spirals)
        for i in range(len(spirals)):
            y = spirals.trajectories[i, 0]
            assert ie_residual(y, spiral_z0(spec, spirals.seed, i), spec) <= 10 * spec.tol

    def test_burgers_determinism(self, burgers):
        assert dataset_bytes(gen_burgers(3, BurgersSpec(64, 11), seed=5)) == dataset_bytes(burgers)

    def test_threads_match_serial(self):
        spec = IEKernelSpec(n_time=30)
        assert dataset_bytes(gen_spirals(5, spec, 1, threads=3)) == dataset_bytes(gen_spirals(5, spec, 1))

    def test_seed_changes_data(self):
        spec = IEKernelSpec(n_time=20)
        assert dataset_bytes(gen_spirals(2, spec, 0)) != dataset_bytes(gen_spirals(2, spec, 1))

    def test_count_validated(self):
        with pytest.raises(ParameterError):
            gen_spirals(0)

    def test_spec_round_trip(self, burgers):
        assert spec_from_dataset(burgers) == BurgersSpec(64, 11)

    def test_sample_snapshots_are_trajectory_endpoints(self, burgers):
        s = burgers[1]
        np.testing.assert_array_equal(s.initial, s.target[:, 0])
        np.testing.assert_array_equal(s.final, s.target[:, -1])


class TestDatasetContainer:
    def test_grid_checked(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((2, 3, 4, 1)), SpaceTimeGrid(3, 5, 1))

    def test_subset(self, spirals):
        sub = spirals.subset([2, 0])
        np.testing.assert_array_equal(sub.trajectories[0], spirals.trajectories[2])
        with pytest.raises(ParameterError):
            spirals.subset([7])

    def test_sample_from_trajectory(self):
        traj = np.arange(12.0).reshape(2, 3, 2)
        s = Sample.from_trajectory(traj)
        assert s.initial.tolist() == [[0.0, 1.0], [6.0, 7.0]]


def read_lsno_independently(blob):
    """Minimal reader written against the documented layout only."""
    pos = 4
    version, = struct.unpack_from("<H", blob, pos); pos += 2
    count, s, t, m = struct.unpack_from("<4I", blob, pos); pos += 16
    n, = struct.unpack_from("<I", blob, pos); pos += 4
    name = blob[pos : pos + n].decode(); pos += n
    seed, = struct.unpack_from("<Q", blob, pos); pos += 8
    k, = struct.unpack_from("<I", blob, pos); pos += 4
    params = struct.unpack_from(f"<{k}d", blob, pos); pos += 8 * k
    payload = blob[pos : pos + 8 * count * s * t * m]
    crc, = struct.unpack_from("<I", blob, pos + len(payload))
    return version, (count, s, t, m), name, seed, params, payload, crc


class TestSerialization:
    def test_round_trip(self, tmp_path, burgers):
        path = tmp_path / "b.lsno"
        save_dataset(burgers, path)
        assert load_dataset(path).same_as(burgers)

    def test_layout(self, burgers):
        blob = dataset_bytes(burgers)
        assert blob[:4] == b"LSNO"
        version, dims, name, seed, params, payload, crc = read_lsno_independently(blob)
        assert (version, dims, name, seed) == (1, (3, 64, 11, 1), "burgers", 5)
        assert params == BurgersSpec(64, 11).params()
        assert payload == burgers.trajectories.astype("<f8").tobytes()
        assert crc == zlib.crc32(payload)

    @pytest.mark.parametrize("cut", [3, 10, 40, -5, -1])
    def test_truncated(self, tmp_path, spirals, cut):
        path = tmp_path / "t.lsno"
        path.write_bytes(dataset_bytes(spirals)[:cut])
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_flipped_magic(self, tmp_path, spirals):
        blob = bytearray(dataset_bytes(spirals))
        blob[0] ^= 0xFF
        path = tmp_path / "m.lsno"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_bad_version(self, tmp_path, spirals):
        blob = bytearray(dataset_bytes(spirals))
        blob[4] = 9
        path = tmp_path / "v.lsno"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            load_dataset(path)

    def test_corrupted_payload(self, tmp_path, spirals):
        blob = bytearray(dataset_bytes(spirals))
        blob[200] ^= 0x01
        path = tmp_path / "c.lsno"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="checksum"):
            load_dataset(path)


class TestImport:
    @pytest.mark.parametrize("order, dtype, endian", [("NSTM", "f64", "little"), ("NTSM", "f64", "big"),
                                                      ("MNTS", "f64", "little")])
    def test_round_trip(self, tmp_path, burgers, order, dtype, endian):
        raw = tmp_path / "raw.bin"
        desc = export_raw(burgers, raw, order, dtype, endian)
        back = import_external(raw, desc)
        np.testing.assert_array_equal(back.trajectories, burgers.trajectories)
        assert back.grid == burgers.grid

    def test_float32(self, tmp_path, burgers):
        raw = tmp_path / "raw.bin"
        back = import_external(raw, export_raw(burgers, raw, dtype="f32"))
        np.testing.assert_array_equal(back.trajectories, burgers.trajectories.astype(np.float32))

    def test_wrong_node_count(self, tmp_path, burgers):
        raw = tmp_path / "raw.bin"
        export_raw(burgers, raw)
        with pytest.raises(IngestionError):
            import_external(raw, "shape=3,32,11,1\norder=NSTM\ndtype=f64\nendianness=little\n")

    def test_spot_check_independent_reader(self, tmp_path, burgers):
        raw = tmp_path / "raw.bin"
        desc = export_raw(burgers, raw, "TNSM", "f64", "big")
        back = import_external(raw, desc)
        blob = raw.read_bytes()
        n, s, t, m = burgers.trajectories.shape
        rng = np.random.default_rng(0)
        for _ in range(10):
            i, j, k, c = rng.integers(n), rng.integers(s), rng.integers(t), rng.integers(m)
            offset = (((k * n + i) * s + j) * m + c) * 8
            value, = struct.unpack(">d", blob[offset : offset + 8])
            assert back.trajectories[i, j, k, c] == value

    def test_bad_descriptor(self):
        with pytest.raises(IngestionError):
            parse_descriptor("order=NSTM\n")
        with pytest.raises(IngestionError):
            parse_descriptor("shape=1,2,3,4\norder=NSTX\n")
        with pytest.raises(IngestionError):
            parse_descriptor("shape=1,2,3,4\ndtype=int8\n")


def test_file_hash_stable(tmp_path, spirals):
    a, b = tmp_path / "a.lsno", tmp_path / "b.lsno"
    save_dataset(spirals, a)
    save_dataset(gen_spirals(4, seed=3), b)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()
