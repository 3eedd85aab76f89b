import json
import math
import os

import pytest
from pydantic import ValidationError

from heisholder.config import Config, load_config, log_json, log_level, thread_count
from heisholder.params import CarnotParams, Provenance
from heisholder.services.cache import MemoCache, cache_result, generate_key


# params

def test_default_constants(params):
    assert params.eta == pytest.approx(0.4)
    assert params.rho == pytest.approx(2.0 ** -1.5 / 2.0)
    assert params.E == 5.0
    assert params.provenance["L"] is Provenance.CHOSEN
    assert params.provenance["eta"] is Provenance.DERIVED


def test_fitted_L_is_doubled_and_clamped(params):
    small = params.fitted(0.3)
    assert small.L == 1.0
    assert small.provenance["L"] is Provenance.FITTED
    assert params.fitted(2.0).L == 4.0
    assert params.L == 1.0


def test_override_revalidates(params):
    assert params.override(n=4, n0=2).n == 4
    with pytest.raises(ValidationError):
        params.override(c=1.0)
    with pytest.raises(ValidationError):
        params.override(n0=3)
    with pytest.raises(ValidationError):
        CarnotParams(L=-1.0)
    with pytest.raises(ValidationError):
        CarnotParams(eta=0.5)


def test_params_are_frozen(params):
    with pytest.raises(ValidationError):
        params.L = 2.0


def test_params_dump_round_trips(params):
    tuned = params.override(K=3.5, mu=0.25).fitted(1.2)
    data = tuned.model_dump(mode="json", exclude={"eta", "rho", "E"})
    assert CarnotParams.model_validate(data) == tuned
    assert tuned.model_dump()["E"] == pytest.approx(4.0 + 0.25)


# config

def test_default_config():
    cfg = load_config(None)
    assert cfg == Config()
    assert cfg.tolerances.distance == 1e-9
    assert cfg.tolerances.evaluate == 1e-6
    assert cfg.max_nodes == 20000
    assert cfg.carnot_params() == CarnotParams()


def test_config_file_and_cli_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "params": {"L": 2.0, "n": 3},
        "seed": 7,
        "outputs": {"fill": "custom.json"},
    }))
    cfg = load_config(str(path))
    assert cfg.seed == 7
    assert cfg.carnot_params().L == 2.0
    assert cfg.carnot_params(L=3.0, c=None).L == 3.0
    assert cfg.carnot_params(n=5).n == 5
    assert cfg.output_for("fill", None) == "custom.json"
    assert cfg.output_for("fill", "explicit.json") == "explicit.json"
    assert cfg.output_for("mesh", None) == "mesh.obj"


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ValidationError) as caught:
        Config.model_validate({"params": {"lambda": 2}})
    assert caught.value.errors()[0]["loc"] == ("params", "lambda")
    with pytest.raises(ValidationError):
        Config.model_validate({"tolerances": {"distance": -1.0}})
    with pytest.raises(ValidationError):
        Config.model_validate({"max_nodes": 0})


def test_thread_count(monkeypatch):
    cores = os.cpu_count() or 1
    monkeypatch.delenv("HEIS_THREADS", raising=False)
    assert thread_count() == cores
    monkeypatch.setenv("HEIS_THREADS", "1")
    assert thread_count() == 1
    monkeypatch.setenv("HEIS_THREADS", str(cores + 50))
    assert thread_count() == cores
    monkeypatch.setenv("HEIS_THREADS", "many")
    assert thread_count() == cores
    monkeypatch.setenv("HEIS_THREADS", "0")
    assert thread_count() == 1


def test_logging_environment(monkeypatch):
    monkeypatch.setenv("HEIS_LOG_LEVEL", "debug")
    assert log_level() == "DEBUG"
    monkeypatch.setenv("HEIS_LOG_JSON", "true")
    assert log_json()
    monkeypatch.setenv("HEIS_LOG_JSON", "0")
    assert not log_json()


# cache

def test_keys_are_stable():
    assert generate_key("geo", {"a": 1, "b": [1.5, 2]}) == generate_key("geo", {"b": [1.5, 2], "a": 1})
    assert generate_key("geo", {"a": 1}) != generate_key("fill", {"a": 1})
    assert generate_key("geo", {"a": 1}).startswith("geo:")


def test_memo_cache_trims_to_the_newest_entries():
    cache = MemoCache(max_items=3, keep_items=2)
    for i in range(4):
        cache.set(f"k{i}", i)
    assert cache.get_stats()["size"] == 2
    assert cache.get("k0") is None
    assert cache.get("k3") == 3
    assert cache.get_stats() == {"size": 2, "hits": 1, "misses": 1}
    assert cache.delete("k3")
    assert not cache.delete("k3")
    cache.clear()
    assert cache.get_stats() == {"size": 0, "hits": 0, "misses": 0}


def test_cache_result_memoizes():
    cache = MemoCache()
    calls = []

    @cache_result("square", cache)
    def square(x):
        calls.append(x)
        return x * x

    assert square(3) == 9
    assert square(3) == 9
    assert square(x=3) == 9
    assert calls == [3, 3]
    assert square(2.5) == pytest.approx(6.25)
    assert cache.get_stats()["size"] == 3
    assert math.isclose(cache.get_stats()["hits"], 1)
