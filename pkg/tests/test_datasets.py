import math

import numpy as np
import pytest

from fishervi.datasets import (
    load_csv_design,
    load_epilepsy,
    load_libsvm,
    load_polypharmacy,
    load_returns,
    load_toenail,
)


def write(path, text):
    path.write_text(text)
    return path


class TestCsvDesign:
    def test_toy_table_hand_encoded(self, tmp_path):
        # 4-row table: one numeric, one 3-level categorical; reference level
        # is the lexicographic first ("a"), so two dummies plus intercept
        p = write(tmp_path / "toy.csv",
                  "y,x1,color\n1,2.0,a\n0,4.0,b\n1,6.0,c\n0,8.0,b\n")
        d = load_csv_design(p, response="y")
        assert d.info.column_names == ["intercept", "x1", "color=b", "color=c"]
        x1 = np.array([2.0, 4.0, 6.0, 8.0])
        std = (x1 - 5.0) / x1.std()
        np.testing.assert_allclose(d.X[:, 1], std)
        np.testing.assert_allclose(d.X[:, 2], [0, 1, 0, 1])
        np.testing.assert_allclose(d.X[:, 3], [0, 0, 1, 0])
        np.testing.assert_allclose(d.y, [1, 0, 1, 0])
        assert d.info.numeric_stats["x1"] == (5.0, pytest.approx(x1.std()))

    def test_constant_column_rejected(self, tmp_path):
        p = write(tmp_path / "c.csv", "y,x\n1,3\n0,3\n1,3\n")
        with pytest.raises(ValueError, match="constant"):
            load_csv_design(p, response="y")

    def test_credit_shaped_file_gives_49_columns(self, tmp_path, rng):
        # 7 numeric attributes plus 13 categoricals with the level counts of
        # the classic credit-scoring data: 1 + 7 + sum(levels - 1) = 49
        level_counts = [4, 5, 10, 5, 5, 4, 3, 4, 3, 3, 4, 2, 2]
        n = 300
        header = ["y"] + [f"num{i}" for i in range(7)] + \
                 [f"cat{i}" for i in range(13)]
        lines = [",".join(header)]
        for k in range(n):
            row = [str(int(rng.random() < 0.5))]
            row += [f"{rng.standard_normal():.5f}" for _ in range(7)]
            for lc in level_counts:
                # cycle guarantees every level appears
                row.append(f"v{(k + lc) % lc}")
            lines.append(",".join(row))
        p = write(tmp_path / "credit.csv", "\n".join(lines) + "\n")
        d = load_csv_design(p, response="y")
        assert d.X.shape == (n, 49)

    def test_loading_twice_is_identical(self, tmp_path):
        p = write(tmp_path / "t.csv", "y,x\n1,0.5\n0,1.5\n1,2.5\n")
        d1 = load_csv_design(p, response="y")
        d2 = load_csv_design(p, response="y")
        np.testing.assert_array_equal(d1.X, d2.X)
        np.testing.assert_array_equal(d1.y, d2.y)


class TestLibsvm:
    def test_single_feature_line(self, tmp_path):
        p = write(tmp_path / "a.svm", "+1 3:1\n")
        x, y = load_libsvm(p)
        np.testing.assert_allclose(x.toarray(), [[0.0, 0.0, 1.0]])
        np.testing.assert_allclose(y, [1.0])

    def test_empty_feature_list_zero_row(self, tmp_path):
        p = write(tmp_path / "b.svm", "-1 2:0.5\n+1\n")
        x, y = load_libsvm(p)
        np.testing.assert_allclose(x.toarray(), [[0.0, 0.5], [0.0, 0.0]])
        np.testing.assert_allclose(y, [0.0, 1.0])

    def test_duplicate_index_error(self, tmp_path):
        p = write(tmp_path / "c.svm", "+1 1:1 1:2\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_libsvm(p)

    def test_label_mapping_and_validation(self, tmp_path):
        p = write(tmp_path / "d.svm", "-1 1:1\n+1 2:1\n")
        _, y = load_libsvm(p)
        np.testing.assert_allclose(y, [0.0, 1.0])
        bad = write(tmp_path / "e.svm", "2 1:1\n")
        with pytest.raises(ValueError, match="label"):
            load_libsvm(bad)


class TestReturns:
    def test_constant_series_all_zeros(self, tmp_path):
        p = write(tmp_path / "r.csv", "5.0\n5.0\n5.0\n5.0\n")
        np.testing.assert_allclose(load_returns(p), np.zeros(3), atol=1e-14)

    def test_hand_arithmetic(self, tmp_path):
        p = write(tmp_path / "r.csv", f"1.0\n{math.e}\n{math.e ** 2}\n")
        np.testing.assert_allclose(load_returns(p), [0.0, 0.0], atol=1e-10)

    def test_mean_corrected(self, tmp_path, rng):
        rates = np.exp(np.cumsum(rng.standard_normal(30) * 0.01)) + 1.0
        p = write(tmp_path / "r.csv", "\n".join(str(v) for v in rates) + "\n")
        y = load_returns(p)
        assert y.size == 29
        assert abs(y.mean()) < 1e-10

    def test_nonpositive_rate_error(self, tmp_path):
        p = write(tmp_path / "r.csv", "1.0\n-2.0\n3.0\n")
        with pytest.raises(ValueError, match="nonpositive"):
            load_returns(p)


class TestGlmmRecipes:
    def test_epilepsy_models(self, tmp_path):
        rows = ["id,y,visit,base,trt,age"]
        for pid, trt, age, base in ((1, 1, 30, 8), (2, 0, 25, 12)):
            for visit in range(1, 5):
                rows.append(f"{pid},{visit},{visit},{base},{trt},{age}")
        p = write(tmp_path / "epi.csv", "\n".join(rows) + "\n")

        d1 = load_epilepsy(p, "epi1")
        assert d1.family == "poisson-log"
        assert len(d1.X_blocks) == 2
        assert d1.X_blocks[0].shape == (4, 6)
        assert d1.Z_blocks[0].shape == (4, 1)
        # Base = log(base/4); Age centered within the file; V4 flags visit 4
        np.testing.assert_allclose(d1.X_blocks[0][:, 1], math.log(2.0))
        log_ages = np.log([30.0] * 4 + [25.0] * 4)
        np.testing.assert_allclose(d1.X_blocks[0][0, 3],
                                   math.log(30.0) - log_ages.mean())
        np.testing.assert_allclose(d1.X_blocks[0][:, 5], [0, 0, 0, 1])

        d2 = load_epilepsy(p, "epi2")
        assert d2.X_blocks[0].shape == (4, 6)
        np.testing.assert_allclose(d2.X_blocks[0][:, 5], [-0.3, -0.1, 0.1, 0.3])
        np.testing.assert_allclose(d2.Z_blocks[0][:, 1], [-0.3, -0.1, 0.1, 0.3])

    def test_toenail_design(self, tmp_path):
        rows = ["id,y,trt,time", "1,0,1,0", "1,1,1,4", "2,0,0,0", "2,1,0,8"]
        p = write(tmp_path / "toe.csv", "\n".join(rows) + "\n")
        d = load_toenail(p)
        assert d.family == "bernoulli-logit"
        times = np.array([0.0, 4.0, 0.0, 8.0])
        t_std = (times - 3.0) / times.std()
        np.testing.assert_allclose(d.X_blocks[0][:, 2], t_std[:2])
        np.testing.assert_allclose(d.X_blocks[0][:, 3], 1.0 * t_std[:2])
        np.testing.assert_allclose(d.X_blocks[1][:, 3], 0.0 * t_std[2:])

    def test_polypharmacy_mhv_coding(self, tmp_path):
        rows = ["id,y,gender,race,age,mhv,inptmhv",
                "1,0,1,0,20,0,0", "1,1,1,0,20,3,1",
                "2,0,0,1,40,8,0", "2,1,0,1,40,20,0"]
        p = write(tmp_path / "poly.csv", "\n".join(rows) + "\n")
        d = load_polypharmacy(p)
        x = np.vstack(d.X_blocks)
        np.testing.assert_allclose(x[0, 3], math.log(2.0), atol=1e-12)  # age 20
        np.testing.assert_allclose(x[2, 3], math.log(4.0), atol=1e-12)  # age 40
        np.testing.assert_allclose(x[0, 4:7], [0, 0, 0])   # mhv = 0
        np.testing.assert_allclose(x[1, 4:7], [1, 0, 0])   # 1 <= mhv <= 5
        np.testing.assert_allclose(x[2, 4:7], [0, 1, 0])   # 6 <= mhv <= 14
        np.testing.assert_allclose(x[3, 4:7], [0, 0, 1])   # mhv >= 15
        np.testing.assert_allclose(x[:, 7], [0, 1, 0, 0])

    def test_recipes_feed_glmm_model(self, tmp_path, rng):
        from fishervi.targets import GlmmModel

        rows = ["id,y,trt,time"]
        for pid in range(1, 6):
            for j in range(3):
                rows.append(f"{pid},{int(rng.random() < 0.5)},{pid % 2},{j}")
        p = write(tmp_path / "toe.csv", "\n".join(rows) + "\n")
        d = load_toenail(p)
        model = GlmmModel(d.family, d.X_blocks, d.Z_blocks, d.y_blocks)
        assert model.dim == 5 * 1 + 4 + 1
        theta = rng.standard_normal(model.dim) * 0.2
        assert np.isfinite(model.log_h(theta))
