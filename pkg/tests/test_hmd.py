import numpy as np
import pytest

from mortboost import DEFAULT_CAUSES, FeatureSpace, ParseError, parse_cod_csv, parse_hmd_1x1, write_cod_csv, write_hmd_1x1
from mortboost.hmd import cause_total_report, clip_to_space


def hmd_text(rows, title="Switzerland, Deaths (period 1x1)"):
    head = f"{title},  Last modified: whenever\n\n  Year          Age             Female            Male           Total\n"
    return head + "\n".join(rows) + "\n"


def synthetic_file(age_min, age_max, year_min, year_max, value=lambda a, t: 100.0, open_top=False):
    rows = []
    for t in range(year_min, year_max + 1):
        for a in range(age_min, age_max + 1):
            tok = f"{a}+" if open_top and a == age_max else str(a)
            v = value(a, t)
            rows.append(f"  {t}  {tok}  {v}  {v}  {2 * v}")
    return hmd_text(rows)


class TestParseHmd:
    def test_column_extraction(self):
        text = hmd_text(["1876  0  8954.23  9311.77  18266.00"])
        grid = parse_hmd_1x1(text, "exposures")
        assert grid.female[0, 0] == 8954.23
        assert grid.male[0, 0] == 9311.77
        assert list(grid.ages) == [0] and list(grid.years) == [1876]

    def test_open_age_floor(self):
        text = hmd_text(["2014  110+  3.5  1.2  4.7"])
        grid = parse_hmd_1x1(text, "deaths")
        assert list(grid.ages) == [110]
        assert grid.open_age == 110

    def test_missing_marker(self):
        text = hmd_text(["2000  10  .  5.0  5.0"])
        grid = parse_hmd_1x1(text, "deaths")
        assert np.isnan(grid.female[0, 0]) and grid.male[0, 0] == 5.0

    def test_two_line_header_without_column_names(self):
        text = "some title\n\n2001  5  1.5  2.5  4.0\n"
        grid = parse_hmd_1x1(text, "deaths")
        assert grid.female[0, 0] == 1.5 and list(grid.years) == [2001]

    def test_swiss_shaped_file_expands_to_27244_cells(self):
        text = synthetic_file(0, 97, 1876, 2014)
        grid = parse_hmd_1x1(text, "exposures")
        assert grid.female.size + grid.male.size == 27244

    def test_malformed_line_reports_line_number(self):
        text = hmd_text(["2000  0  1.0  2.0  3.0", "2000  zzz  1.0  2.0  3.0"])
        with pytest.raises(ParseError, match="line 5"):
            parse_hmd_1x1(text, "deaths")

    def test_duplicate_key_rejected(self):
        text = hmd_text(["2000  0  1.0  2.0  3.0", "2000  0  1.0  2.0  3.0"])
        with pytest.raises(ParseError, match="duplicate"):
            parse_hmd_1x1(text, "deaths")

    def test_negative_value_rejected(self):
        text = hmd_text(["2000  0  -1.0  2.0  1.0"])
        with pytest.raises(ParseError):
            parse_hmd_1x1(text, "deaths")

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        rows = []
        for t in (2000, 2001):
            for a in (95, 96, 110):
                tok = "110+" if a == 110 else str(a)
                f, m = (float(v) for v in rng.uniform(0, 50, 2))
                rows.append(f"{t}  {tok}  {f!r}  {m!r}  {f + m!r}")
        rows.append("2002  95  .  1.0  1.0")
        rows.append("2002  96  2.0  .  2.0")
        rows.append("2002  110+  0.0  0.0  0.0")
        grid = parse_hmd_1x1(hmd_text(rows), "deaths")
        again = parse_hmd_1x1(write_hmd_1x1(grid), "deaths")
        assert np.array_equal(grid.ages, again.ages)
        assert np.array_equal(grid.years, again.years)
        for name in ("female", "male", "total"):
            assert np.array_equal(getattr(grid, name), getattr(again, name), equal_nan=True)
        assert grid.open_age == again.open_age


class TestClipToSpace:
    def test_pooling_sums_top_ages(self):
        deaths = parse_hmd_1x1(synthetic_file(95, 110, 2000, 2001, value=lambda a, t: 2.0), "deaths")
        exposures = parse_hmd_1x1(synthetic_file(95, 110, 2000, 2001, value=lambda a, t: 50.0), "exposures")
        space = FeatureSpace(95, 97, 2000, 2001)
        table, report = clip_to_space(deaths, exposures, space, pool_top_age=True)
        # ages 97..110 collapse into the 97 row: 14 rows of 2 deaths, 50 exposure
        assert table.deaths[0, -1, 0] == 28
        assert table.exposure[0, -1, 0] == 14 * 50.0
        assert table.deaths[0, 0, 0] == 2

    def test_identity_without_pooling(self):
        deaths = parse_hmd_1x1(synthetic_file(0, 4, 2000, 2001, value=lambda a, t: 3.0), "deaths")
        exposures = parse_hmd_1x1(synthetic_file(0, 4, 2000, 2001, value=lambda a, t: 70.0), "exposures")
        space = FeatureSpace(0, 4, 2000, 2001)
        table, report = clip_to_space(deaths, exposures, space, pool_top_age=False)
        assert np.all(table.deaths == 3)
        assert np.all(table.exposure == 70.0)
        assert report.n_rounded == 0

    def test_pooling_conserves_totals_and_reports_rounding(self):
        rng = np.random.default_rng(11)
        vals = {}

        def value(a, t):
            key = (a, t)
            if key not in vals:
                vals[key] = float(np.round(rng.uniform(0, 20), 2))
            return vals[key]

        deaths = parse_hmd_1x1(synthetic_file(90, 105, 1990, 1995, value=value), "deaths")
        exposures = parse_hmd_1x1(synthetic_file(90, 105, 1990, 1995, value=lambda a, t: 100.0), "exposures")
        space = FeatureSpace(90, 97, 1990, 1995)
        table, report = clip_to_space(deaths, exposures, space, pool_top_age=True)
        raw_total = deaths.female.sum() + deaths.male.sum()
        assert table.total_deaths == pytest.approx(raw_total, abs=0.5 * table.deaths.size)
        assert report.max_rounding_delta < 0.5 + 1e-12

    def test_missing_years_listed(self):
        deaths = parse_hmd_1x1(synthetic_file(0, 4, 2000, 2001), "deaths")
        exposures = parse_hmd_1x1(synthetic_file(0, 4, 2000, 2001), "exposures")
        with pytest.raises(ValueError, match=r"\[2002, 2003\]"):
            clip_to_space(deaths, exposures, FeatureSpace(0, 4, 2000, 2003), pool_top_age=False)


def cod_csv(rows):
    return "gender,age_group,year,cause,deaths\n" + "\n".join(rows) + "\n"


class TestParseCodCsv:
    def test_direct_mapping(self):
        table = parse_cod_csv(cod_csv(["male,4,1995,2,1023"]))
        assert table.counts[1, 3, 0, 1] == 1023
        assert not table.missing[1, 3, 0, 1]
        assert table.causes[1] == "malignant tumors"

    def test_label_matching_case_insensitive(self):
        table = parse_cod_csv(cod_csv(["female,1,2000,Dementia,7"]))
        assert table.counts[0, 0, 0, 3] == 7

    def test_missing_deaths_field(self):
        table = parse_cod_csv(cod_csv(["female,3,1992,4,"]))
        assert table.missing[0, 2, 0, 3]
        assert table.counts[0, 2, 0, 3] == 0

    def test_swiss_shape(self):
        rows = [
            f"{g},{b},{t},{k},5"
            for g in ("female", "male")
            for b in range(1, 7)
            for t in range(1990, 2015)
            for k in range(1, 13)
        ]
        table = parse_cod_csv(cod_csv(rows))
        assert table.counts.shape == (2, 6, 25, 12)
        assert table.counts.size == 3600  # 2*6*25*12

    def test_errors(self):
        with pytest.raises(ParseError, match="unknown cause"):
            parse_cod_csv(cod_csv(["male,1,2000,not a cause,1"]))
        with pytest.raises(ParseError, match="duplicate"):
            parse_cod_csv(cod_csv(["male,1,2000,1,1", "male,1,2000,1,2"]))
        with pytest.raises(ParseError, match="negative"):
            parse_cod_csv(cod_csv(["male,1,2000,1,-3"]))
        with pytest.raises(ParseError, match="header"):
            parse_cod_csv("a,b,c\n")

    def test_unmentioned_cells_are_missing(self):
        table = parse_cod_csv(cod_csv(["male,2,2000,1,5", "male,2,2001,1,6"]))
        assert table.missing[0, 0, 0, 0]  # female bucket 1 never mentioned
        assert not table.missing[1, 1, 0, 0]

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        rows = []
        for g in ("female", "male"):
            for b in (1, 2):
                for t in (1990, 1991, 1992):
                    for k in range(1, 5):
                        if (b, t, k) == (1, 1991, 2):
                            rows.append(f"{g},{b},{t},{k},")
                        else:
                            rows.append(f"{g},{b},{t},{k},{rng.integers(0, 100)}")
        causes = DEFAULT_CAUSES[:4]
        table = parse_cod_csv(cod_csv(rows), causes=causes)
        again = parse_cod_csv(write_cod_csv(table), causes=causes)
        assert np.array_equal(table.counts, again.counts)
        assert np.array_equal(table.missing, again.missing)
        assert table.causes == again.causes


class TestCauseTotalReport:
    def test_discrepancies_reported_not_raised(self):
        table = parse_cod_csv(cod_csv(["male,1,2000,1,10", "male,1,2000,2,10"]))
        all_cause = np.zeros((2, 1, 1))
        all_cause[1, 0, 0] = 15  # less than 20 reported by cause
        report = cause_total_report(table, all_cause)
        assert len(report) == 1 and "exceeds" in report[0]
        ok = np.full((2, 1, 1), 25.0)
        assert cause_total_report(table, ok) == []
