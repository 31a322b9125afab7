import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restedge.model import season_covariate, GameSpec, Layout, ModelVariant, ParameterVector, PriorConfig, expected_outcome
from restedge.schedule import TABLE1, load_games, write_games
from restedge.simulate import ScheduleTemplate, analytic_posterior, gen_dataset, write_truth

from conftest import make_dataset

M1, M2 = ModelVariant.from_number(1), ModelVariant.from_number(2)
SMALL = ScheduleTemplate(n_teams=6, n_seasons=3, games_per_season=30)


def truth(**kw):
    base = dict(theta=None, gamma=0.6, sigma_teamstrength=3.0, sigma_game=12.0, alpha_ha_trend=-0.05,
                alpha_ha_intercept=2.0, alpha_mnf=0.5, alpha_mini=0.4, alpha_bye=2.0)
    base.update(kw)
    return ParameterVector(**base)


def means(ds, params, variant, layout):
    return np.array([expected_outcome(params, GameSpec(g.season, g.home_team, g.away_team, g.neutral_site,
                                                       i.bye, i.mini, i.mnf), variant, layout)
                     for g, i in zip(ds.games, ds.indicators)])


class TestTemplate:
    def test_default_shape(self):
        t = ScheduleTemplate()
        assert len(t.teams) == 32 and t.seasons == tuple(range(2002, 2024))

    @pytest.mark.parametrize("kw", [dict(n_teams=1), dict(n_seasons=0), dict(neutral_rate=1.5),
                                    dict(rest_pairs=(((7, 3), 1.0),)), dict(rest_pairs=(((7, 7), -1.0),))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ScheduleTemplate(**kw)


class TestGenDataset:
    def test_noiseless(self):
        ds, tr = gen_dataset(truth(sigma_game=0.0), SMALL, seed=1)
        lay = SMALL.layout()
        np.testing.assert_array_equal([g.home_margin for g in ds.games], means(ds, tr, M1, lay))

    def test_spread_equals_margin(self):
        ds, _ = gen_dataset(truth(), SMALL, seed=2)
        for g in ds.games:
            assert g.spread_home_margin == g.home_margin

    def test_split_variant_from_truth(self):
        ds, tr = gen_dataset(truth(alpha_bye=None, alpha_bye_pre=3.0, alpha_bye_post=0.0, sigma_game=0.0),
                             ScheduleTemplate(n_teams=8, n_seasons=12, first_season=2005, games_per_season=40),
                             seed=3)
        lay = Layout(tuple(ScheduleTemplate(n_teams=8).teams), tuple(range(2005, 2017)))
        np.testing.assert_allclose([g.home_margin for g in ds.games], means(ds, tr, M2, lay), atol=1e-12)

    def test_reproducible(self, tmp_path):
        a, _ = gen_dataset(truth(), SMALL, seed=9)
        b, _ = gen_dataset(truth(), SMALL, seed=9)
        c, _ = gen_dataset(truth(), SMALL, seed=10)
        assert a.digest() == b.digest() != c.digest()
        write_games(a, tmp_path / "a.csv")
        write_games(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_csv_round_trip(self, tmp_path):
        ds, _ = gen_dataset(truth(), SMALL, seed=4)
        write_games(ds, tmp_path / "g.csv")
        back = load_games(tmp_path / "g.csv")
        assert back.digest() == ds.digest()
        assert back.indicators == ds.indicators

    def test_game_count_and_distinct_opponents(self):
        ds, _ = gen_dataset(truth(), SMALL, seed=5)
        assert len(ds) == SMALL.n_seasons * SMALL.games_per_season
        assert all(g.home_team != g.away_team for g in ds.games)

    def test_fixed_strengths(self):
        theta = np.arange(18.0).reshape(6, 3)
        _, tr = gen_dataset(truth(theta=theta), SMALL, seed=1, simulate_strengths=False)
        np.testing.assert_array_equal(tr.theta, theta)

    def test_gamma_zero_iid(self):
        tmpl = ScheduleTemplate(n_teams=32, n_seasons=40, games_per_season=0)
        _, tr = gen_dataset(truth(gamma=0.0, sigma_teamstrength=3.0), tmpl, seed=6)
        th = tr.theta
        n = th.size
        assert th.mean() == pytest.approx(0.0, abs=3 * 3.0 / math.sqrt(n))
        # variance of a sample variance is 2 sigma^4 / n for normal data
        assert th.var() == pytest.approx(9.0, abs=3 * math.sqrt(2 * 81 / n))
        r = np.corrcoef(th[:, 1:].ravel(), th[:, :-1].ravel())[0, 1]
        assert abs(r) < 3 / math.sqrt(th[:, 1:].size)

    def test_transition_law(self):
        tmpl = ScheduleTemplate(n_teams=32, n_seasons=60, games_per_season=0)
        _, tr = gen_dataset(truth(gamma=0.7, sigma_teamstrength=2.0), tmpl, seed=7)
        innov = tr.theta[:, 1:] - 0.7 * tr.theta[:, :-1]
        n = innov.size
        assert innov.std() == pytest.approx(2.0, abs=3 * 2.0 / math.sqrt(2 * n))

    def test_residual_mean(self):
        # law of large numbers on y - E[y], pooled over replicates
        resid = []
        for seed in range(5):
            ds, tr = gen_dataset(truth(), SMALL, seed=seed)
            resid.append(np.array([g.home_margin for g in ds.games]) - means(ds, tr, M1, SMALL.layout()))
        resid = np.concatenate(resid)
        assert abs(resid.mean()) < 3 * 12.0 / math.sqrt(resid.size)

    def test_outcome_mean_fixed_game(self):
        # a single matchup repeated: the sample mean converges to its expected outcome
        tmpl = ScheduleTemplate(n_teams=2, n_seasons=1, games_per_season=400, rest_pairs=(((7, 7), 1.0),),
                                neutral_rate=0.0)
        theta = np.array([[1.5], [-1.5]])
        ds, tr = gen_dataset(truth(theta=theta), tmpl, seed=11, simulate_strengths=False)
        y = np.array([g.home_margin for g in ds.games])
        mu = means(ds, tr, M1, tmpl.layout())
        assert abs(y.mean() - mu.mean()) < 3 * 12.0 / math.sqrt(len(y))

    def test_rest_pair_frequencies(self):
        ds, _ = gen_dataset(truth(), ScheduleTemplate(), seed=0)
        weights = {(r[0], r[1]): r[5] for r in TABLE1}
        total = sum(weights.values())
        n = len(ds)
        expected = {k: 0.0 for k in ("bye", "mini", "mnf")}
        for r in TABLE1:
            for k, col in (("bye", 2), ("mini", 3), ("mnf", 4)):
                if r[col] != 0:
                    expected[k] += r[5] / total
        for k in expected:
            observed = sum(getattr(i, k) != 0 for i in ds.indicators) / n
            assert observed == pytest.approx(expected[k], abs=0.02)
        equal = sum(r.home_rest == r.away_rest for r in ds.rests) / n
        assert equal == pytest.approx(sum(w for (h, a), w in weights.items() if h == a) / total, abs=0.02)
        assert set((r.home_rest, r.away_rest) for r in ds.rests) <= set(weights)

    def test_write_truth(self, tmp_path):
        _, tr = gen_dataset(truth(), SMALL, seed=1)
        write_truth(tr, SMALL.layout(), tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "param,value"
        assert len(lines) == 1 + SMALL.layout().n_theta + len(M1.alpha_names) + 3


def ar1_prior_cov(n_seasons, gamma, sigma, init_sd):
    """Covariance of one team's strength path under the autoregressive prior."""
    var = np.empty(n_seasons)
    var[0] = init_sd ** 2
    for s in range(1, n_seasons):
        var[s] = gamma ** 2 * var[s - 1] + sigma ** 2
    cov = np.empty((n_seasons, n_seasons))
    for s in range(n_seasons):
        for t in range(n_seasons):
            lo, hi = min(s, t), max(s, t)
            cov[s, t] = gamma ** (hi - lo) * var[lo]
    return cov


class TestAnalyticPosterior:
    lay = Layout(("BUF", "MIA", "NE"), (2010, 2011, 2012))

    def test_zero_games_is_prior(self):
        ds = make_dataset([])
        mean, cov, names = analytic_posterior(ds, M1, 0.6, 2.0, 10.0, layout=self.lay)
        assert names == self.lay.location_names(M1)
        np.testing.assert_allclose(mean, 0.0, atol=1e-14)
        path = ar1_prior_cov(3, 0.6, 2.0, 2.0)
        for t, team in enumerate(self.lay.teams):
            idx = [self.lay.theta_index(s, team) for s in self.lay.seasons]
            np.testing.assert_allclose(cov[np.ix_(idx, idx)], path, rtol=1e-12)
        other = [self.lay.theta_index(s, "MIA") for s in self.lay.seasons]
        buf = [self.lay.theta_index(s, "BUF") for s in self.lay.seasons]
        np.testing.assert_allclose(cov[np.ix_(buf, other)], 0.0, atol=1e-14)
        nt = self.lay.n_theta
        np.testing.assert_allclose(cov[nt:, nt:], 25.0 * np.eye(len(M1.alpha_names)), rtol=1e-12)

    def test_fixed_init_sd(self):
        mean, cov, _ = analytic_posterior(make_dataset([]), M1, 0.3, 2.0, 10.0,
                                          PriorConfig(theta_init_uses_sigma_teamstrength=False, theta_init_sd=4.0),
                                          layout=self.lay)
        idx = [self.lay.theta_index(s, "NE") for s in self.lay.seasons]
        np.testing.assert_allclose(cov[np.ix_(idx, idx)], ar1_prior_cov(3, 0.3, 2.0, 4.0), rtol=1e-12)

    @pytest.mark.parametrize("mnf", [1, -1])
    def test_one_game_conjugate(self, mnf):
        # rank-one update of the prior: the mnf coefficient's posterior by hand
        y, sg = 7.0, 10.0
        ds = make_dataset([(2011, "BUF", "MIA", y, 0, 0, mnf, False)])
        mean, cov, names = analytic_posterior(ds, M1, 0.6, 2.0, sg, layout=self.lay)
        prior = analytic_posterior(make_dataset([]), M1, 0.6, 2.0, sg, layout=self.lay)[1]
        x = np.zeros(len(names))
        x[self.lay.theta_index(2011, "BUF")] = 1.0
        x[self.lay.theta_index(2011, "MIA")] = -1.0
        x[names.index("alpha_ha_intercept")] = 1.0
        x[names.index("alpha_mnf")] = mnf
        x[names.index("alpha_ha_trend")] = season_covariate(2011)
        v = x @ prior @ x
        j = names.index("alpha_mnf")
        tau2 = prior[j, j]
        assert tau2 == pytest.approx(25.0)
        assert cov[j, j] == pytest.approx(tau2 - (tau2 * mnf) ** 2 / (sg ** 2 + v), rel=1e-10)
        assert mean[j] == pytest.approx(tau2 * mnf * y / (sg ** 2 + v), rel=1e-10)

    @given(st.integers(0, 10_000), st.integers(1, 4))
    @settings(max_examples=25, deadline=None)
    def test_spd(self, seed, model):
        v = ModelVariant.from_number(model)
        ds, _ = gen_dataset(truth(alpha_bye=None, alpha_bye_pre=1.0, alpha_bye_post=0.0) if v.split else truth(),
                            ScheduleTemplate(n_teams=4, n_seasons=3, first_season=2009, games_per_season=8),
                            seed=seed)
        _, cov, _ = analytic_posterior(ds, v, 0.5, 2.0, 11.0)
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > 0

    def test_too_large(self):
        ds, _ = gen_dataset(truth(), ScheduleTemplate(n_teams=32, n_seasons=22, games_per_season=0), seed=0)
        with pytest.raises(ValueError, match="too many"):
            analytic_posterior(ds, M1, 0.5, 2.0, 11.0, layout=ScheduleTemplate().layout())
