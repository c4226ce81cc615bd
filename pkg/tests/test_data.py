import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ledgercluster import data
from ledgercluster.errors import EmptyFile, MalformedRow, NoQualifyingAccounts


def _write(tmp_path, text, name="txns.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadTransactions:
    def test_credit_sign_convention(self, tmp_path):
        path = _write(tmp_path, "account_id,date,type,amount\n1,1995-01-05,credit,700.00\n")
        table = data.load_transactions(path)
        row = table.rows[0]
        assert (row.account_id, str(row.date), row.amount) == (1, "1995-01-05", 700.0)

    def test_debit_sign_flipped(self, tmp_path):
        path = _write(tmp_path, "account_id,date,type,amount\n1,1995-01-09,debit,300.00\n")
        assert data.load_transactions(path).rows[0].amount == -300.0

    def test_account_count(self, tmp_path):
        lines = ["account_id,date,type,amount"]
        for i in range(5300):
            lines.append(f"{i},1995-01-05,credit,1.0")
        table = data.load_transactions(_write(tmp_path, "\n".join(lines) + "\n"))
        assert table.n_accounts == 5300

    def test_malformed_row_reports_line(self, tmp_path):
        path = _write(tmp_path, "account_id,date,type,amount\n1,notadate,credit,1.0\n")
        with pytest.raises(MalformedRow) as err:
            data.load_transactions(path)
        assert err.value.line_number == 2

    def test_unknown_type_rejected(self, tmp_path):
        path = _write(tmp_path, "account_id,date,type,amount\n1,1995-01-05,wire,1.0\n")
        with pytest.raises(MalformedRow):
            data.load_transactions(path)

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyFile):
            data.load_transactions(_write(tmp_path, "account_id,date,type,amount\n"))

    def test_missing_column(self, tmp_path):
        with pytest.raises(MalformedRow) as err:
            data.load_transactions(_write(tmp_path, "account_id,date,amount\n1,1995-01-05,1.0\n"))
        assert "type" in str(err.value)


class TestBuildSeries:
    def test_monthly_sums(self, tmp_path):
        path = _write(tmp_path, (
            "account_id,date,type,amount\n"
            "1,1995-01-10,credit,100\n"
            "1,1995-02-10,credit,100\n"
        ))
        ds = data.build_series(data.load_transactions(path), months=2)
        assert np.allclose(ds.series, [[100.0, 100.0]])

    def test_signed_aggregation_same_month(self, tmp_path):
        path = _write(tmp_path, (
            "account_id,date,type,amount\n"
            "1,1995-03-01,credit,50\n"
            "1,1995-03-20,debit,20\n"
        ))
        ds = data.build_series(data.load_transactions(path), months=1)
        assert np.allclose(ds.series, [[30.0]])

    def test_synthetic_table_oracle(self, tmp_path):
        # Independent oracle: per-(account, month) sums via a dict, no
        # windowing logic shared with the implementation.
        rng = np.random.default_rng(7)
        lines = ["account_id,date,type,amount"]
        expected: dict[int, dict[tuple[int, int], float]] = {}
        for acct in range(10):
            for m in range(24):
                year, month = 1995 + m // 12, 1 + m % 12
                for _ in range(rng.integers(1, 4)):
                    amt = round(float(rng.uniform(1, 100)), 2)
                    kind = "credit" if rng.random() < 0.5 else "debit"
                    lines.append(f"{acct},{year}-{month:02d}-15,{kind},{amt}")
                    signed = amt if kind == "credit" else -amt
                    expected.setdefault(acct, {})
                    expected[acct][(year, month)] = (
                        expected[acct].get((year, month), 0.0) + signed
                    )
        ds = data.build_series(
            data.load_transactions(_write(tmp_path, "\n".join(lines) + "\n")), months=24
        )
        assert ds.series.shape == (10, 24)
        for i, acct_id in enumerate(ds.ids):
            acct = int(acct_id)
            oracle = [expected[acct].get((1995 + m // 12, 1 + m % 12), 0.0)
                      for m in range(24)]
            assert np.allclose(ds.series[i], oracle, atol=1e-9)

    def test_short_history_dropped(self, tmp_path):
        path = _write(tmp_path, (
            "account_id,date,type,amount\n"
            "1,1995-01-10,credit,1\n"
            "1,1996-12-10,credit,1\n"
            "2,1995-01-10,credit,1\n"
        ))
        ds = data.build_series(data.load_transactions(path), months=24, min_history=24)
        assert ds.ids == ["1"]

    def test_no_qualifying_accounts(self, tmp_path):
        path = _write(tmp_path, "account_id,date,type,amount\n1,1995-01-10,credit,1\n")
        with pytest.raises(NoQualifyingAccounts):
            data.build_series(data.load_transactions(path), months=12)

    def test_output_has_no_nan(self, tmp_path):
        path = _write(tmp_path, (
            "account_id,date,type,amount\n"
            "1,1995-01-10,credit,5\n"
            "1,1995-06-10,debit,3\n"
        ))
        ds = data.build_series(data.load_transactions(path), months=6)
        assert np.all(np.isfinite(ds.series)) and ds.series.shape[1] == 6


class TestZnormalize:
    def test_hand_values(self):
        ds = data.Dataset(series=np.array([[1.0, 2.0, 3.0]]), ids=["a"])
        out = data.znormalize(ds)
        assert np.allclose(out.series, [[-1.2247, 0.0, 1.2247]], atol=1e-4)
        assert out.normalized

    def test_constant_row_guard(self):
        ds = data.Dataset(series=np.array([[5.0, 5.0, 5.0]]), ids=["a"])
        assert np.all(data.znormalize(ds).series == 0.0)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        ds = data.Dataset(series=rng.standard_normal((5, 30)), ids=[str(i) for i in range(5)])
        once = data.znormalize(ds)
        twice = data.znormalize(once)
        assert np.max(np.abs(once.series - twice.series)) < 1e-9


class TestSplit:
    def test_half_split_sizes(self):
        ds = data.Dataset(series=np.arange(100.0).reshape(100, 1) * np.ones(20),
                          ids=[str(i) for i in range(100)])
        a, b = data.split(ds, 0.5, seed=0)
        assert (a.n, b.n) == (50, 50)

    def test_floor_rule(self):
        ds = data.Dataset(series=np.ones((5, 20)), ids=list("abcde"))
        a, b = data.split(ds, 0.5, seed=0)
        assert (a.n, b.n) == (2, 3)

    def test_same_seed_same_partition(self):
        ds = data.Dataset(series=np.random.default_rng(1).standard_normal((31, 20)),
                          ids=[str(i) for i in range(31)])
        a1, b1 = data.split(ds, 0.4, seed=9)
        a2, b2 = data.split(ds, 0.4, seed=9)
        assert a1.ids == a2.ids and b1.ids == b2.ids

    @given(n=st.integers(min_value=2, max_value=60),
           seed=st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=40, deadline=None)
    def test_partition_disjoint_exhaustive(self, n, seed):
        ds = data.Dataset(series=np.zeros((n, 20)), ids=[str(i) for i in range(n)])
        a, b = data.split(ds, 0.5, seed=seed)
        assert sorted(a.ids + b.ids) == sorted(ds.ids)
        assert not set(a.ids) & set(b.ids)


class TestGenPolynomial:
    def test_degree_one_is_affine(self):
        cfg = data.SynthConfig(degrees=(1,), per_degree=5, length=50,
                               noise_sigma=0.0, seed=0)
        ds = data.gen_polynomial(cfg, normalize=False)
        second = np.diff(ds.series, n=2, axis=1)
        assert np.max(np.abs(second)) < 1e-9

    def test_balanced_labels(self):
        cfg = data.SynthConfig(degrees=(1, 2, 3), per_degree=50, length=40,
                               noise_sigma=0.01, seed=1)
        ds = data.gen_polynomial(cfg)
        assert ds.n == 150
        assert np.bincount(ds.labels).tolist() == [50, 50, 50]
        assert ds.normalized

    def test_deterministic(self):
        cfg = data.SynthConfig(degrees=(1, 2), per_degree=10, length=30,
                               noise_sigma=0.05, seed=3)
        assert np.array_equal(data.gen_polynomial(cfg).series,
                              data.gen_polynomial(cfg).series)

    @pytest.mark.parametrize("degree", [0, 1, 2, 3, 4])
    def test_finite_difference_of_matching_order_vanishes(self, degree):
        cfg = data.SynthConfig(degrees=(degree,), per_degree=3, length=30,
                               noise_sigma=0.0, seed=5)
        ds = data.gen_polynomial(cfg, normalize=False)
        diff = np.diff(ds.series, n=degree + 1, axis=1)
        assert np.max(np.abs(diff)) < 1e-8

    def test_length_constraint(self):
        with pytest.raises(ValueError):
            data.SynthConfig(length=25)


class TestDatasetCsv:
    def test_round_trip_with_labels(self, tmp_path):
        cfg = data.SynthConfig(degrees=(1, 2), per_degree=4, length=20, seed=0)
        ds = data.gen_polynomial(cfg)
        path = tmp_path / "ds.csv"
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert np.array_equal(back.series, ds.series)
        assert back.ids == ds.ids
        assert np.array_equal(back.labels, ds.labels)

    def test_round_trip_without_labels(self, tmp_path):
        ds = data.Dataset(series=np.random.default_rng(0).standard_normal((3, 20)),
                          ids=["x", "y", "z"])
        path = tmp_path / "ds.csv"
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert back.labels is None
        assert np.array_equal(back.series, ds.series)
