import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from semtrial import _backend

SCRIPT = textwrap.dedent("""
    import sys
    import numpy as np
    from semtrial import _backend
    from semtrial.bootstrap import averaging_point, averaging_run
    from semtrial.sem import fit_sem
    from semtrial.simulate import SimScenario
    from semtrial.streams import rng_for

    out = sys.argv[1]
    B = int(sys.argv[2])
    cont = SimScenario("A", "alternative", 0.35, 60).generate(rng_for(1, 0))
    binary = SimScenario("C", "alternative", 1.0, 80).generate(rng_for(1, 1))
    arrays = {"backend": np.array([_backend.backend_name()])}
    for name, ds in (("cont", cont), ("bin", binary)):
        fit = fit_sem(ds)
        arrays[name + "_ll"] = np.array([fit.loglik])
        arrays[name + "_cov"] = fit.param_cov
        arrays[name + "_rec"] = averaging_point(ds, V=5, seed=4)
        if B:
            arrays[name + "_boot"] = averaging_run(ds, B=B, seed=4, V=5).records
    np.savez(out, **arrays)
""")


def _run(tmp_path, tag, env_extra, B):
    script = tmp_path / "probe.py"
    script.write_text(SCRIPT)
    out = tmp_path / f"{tag}.npz"
    env = dict(os.environ, **env_extra)
    proc = subprocess.run([sys.executable, str(script), str(out), str(B)], env=env,
                          capture_output=True, text=True, timeout=1200)
    assert proc.returncode == 0, proc.stderr
    return np.load(out)


def test_flag_parsing(monkeypatch):
    for value in ("1", "true", "YES", " on "):
        monkeypatch.setenv(_backend.ENV_FLAG, value)
        assert _backend._flag_set()
    for value in ("", "0", "off"):
        monkeypatch.setenv(_backend.ENV_FLAG, value)
        assert not _backend._flag_set()


def test_numpy_fallback_matches_compiled(tmp_path):
    fast = _run(tmp_path, "numba", {_backend.ENV_FLAG: "0"}, 0)
    slow = _run(tmp_path, "numpy", {_backend.ENV_FLAG: "1"}, 0)
    assert fast["backend"][0] == "numba" and slow["backend"][0] == "numpy"
    for key in ("cont_ll", "cont_cov", "cont_rec", "bin_ll", "bin_cov", "bin_rec"):
        np.testing.assert_allclose(slow[key], fast[key], rtol=1e-7, atol=1e-9, err_msg=key)


@pytest.mark.skipif(not _backend.NUMBA_ENABLED, reason="needs the compiled backend")
def test_bit_identical_across_thread_counts(tmp_path):
    one = _run(tmp_path, "t1", {"NUMBA_NUM_THREADS": "1"}, 100)
    many = _run(tmp_path, "t3", {"NUMBA_NUM_THREADS": "3"}, 100)
    for key in one.files:
        assert np.array_equal(one[key], many[key]), key


def test_set_threads_bounds():
    n = _backend.set_threads(0)
    assert n >= 1
    assert _backend.set_threads(10_000) == n
    assert _backend.set_threads(1) == 1
    _backend.set_threads(0)
