import json

import numpy as np
import pytest
from PIL import Image

from convinv import cli, forward, tensor
from convinv.metrics import psnr

GAUSS_2x2 = [[{"kind": "gaussian", "sigma": 0.7},
              {"kind": "gaussian", "sigma": 2.0}],
             [{"kind": "gaussian", "sigma": 2.0},
              {"kind": "gaussian", "sigma": 0.7}]]


def write_cfg(path, cfg):
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def base_cfg(tmp, **prior):
    return {
        "forward": {"N": 32, "K": 2, "S": 2, "snr_db": 30, "seed": 3,
                    "psfs": GAUSS_2x2},
        "prior": dict({"prior": "tv", "preset": {"snr_db": 30},
                       "max_iters": 300}, **prior),
        "io": {"measurement": str(tmp / "y.civs"),
               "truth": str(tmp / "x.civs"),
               "bank": str(tmp / "bank"),
               "output": str(tmp / "xr.civs")},
    }


def run(cfg_path, *cmd):
    return cli.main(["--config", cfg_path, *cmd])


def test_simulate_three_slices_at_20db(tmp_path):
    psfs = [[{"kind": "gaussian", "sigma": 0.5 + k + s} for s in range(3)]
            for k in range(3)]
    cfg = {"forward": {"N": 32, "K": 3, "S": 3, "snr_db": 20, "seed": 1,
                       "psfs": psfs},
           "io": {"measurement": str(tmp_path / "y.civs")}}
    assert run(write_cfg(tmp_path / "c.json", cfg), "simulate") == 0
    y = tensor.read_container(tmp_path / "y.civs")
    assert y.shape == (3, 32, 32)
    man = json.loads((tmp_path / "y.manifest.json").read_text())
    assert all(abs(v - 20) <= 0.5 for v in man["snr_db_realized"])
    assert len(man["noise_sigma"]) == 3 and man["seed"] == 1
    bank = forward.BlurBank.load(man["bank"])
    assert bank.digest() == man["bank_sha256"]


def test_simulate_noiseless_is_exact(tmp_path):
    cfg = base_cfg(tmp_path)
    cfg["forward"]["noiseless"] = True
    assert run(write_cfg(tmp_path / "c.json", cfg), "simulate") == 0
    y = tensor.read_container(tmp_path / "y.civs")
    x = tensor.read_container(tmp_path / "x.civs")
    bank = forward.BlurBank.load(tmp_path / "bank")
    assert y.tobytes() == forward.apply_forward(bank, x).tobytes()


def test_missing_bank_path_exits_2(tmp_path, capsys):
    cfg = base_cfg(tmp_path)
    del cfg["forward"]["psfs"]
    cfg["forward"]["bank"] = str(tmp_path / "nowhere")
    assert run(write_cfg(tmp_path / "c.json", cfg), "simulate") == 2
    assert "no PSF bank" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = base_cfg(tmp_path)
    cfg["prior"]["lambda"] = 0.1
    path = write_cfg(tmp_path / "c.json", cfg)
    assert run(path, "reconstruct") == 2
    err = capsys.readouterr().err
    line = next(i + 1 for i, t in enumerate(open(path))
                if '"lambda"' in t)
    assert "c.json:%d:" % line in err and "lambda" in err


def test_bad_value_and_bad_json(tmp_path, capsys):
    cfg = base_cfg(tmp_path)
    cfg["prior"]["beta"] = -1
    assert run(write_cfg(tmp_path / "c.json", cfg), "reconstruct") == 2
    assert "prior.beta" in capsys.readouterr().err
    (tmp_path / "b.json").write_text('{\n  "forward": {\n    "N": 32,\n}\n')
    assert run(str(tmp_path / "b.json"), "simulate") == 2
    assert "b.json:4: invalid JSON" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    assert cli.main(["simulate"]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["score"]) == 2


def test_end_to_end_tv_improvement(tmp_path):
    cfg = base_cfg(tmp_path)
    cfg["report"] = {"csv": True, "png": True}
    path = write_cfg(tmp_path / "c.json", cfg)
    assert run(path, "simulate") == 0
    assert run(path, "reconstruct") == 0
    x = tensor.read_container(tmp_path / "x.civs")
    y = tensor.read_container(tmp_path / "y.civs")
    xr = tensor.read_container(tmp_path / "xr.civs")
    assert psnr(x, xr) >= psnr(x, y) + 3
    rep = json.loads((tmp_path / "xr.report.json").read_text())
    assert rep["converged"] and "timings" not in rep
    assert (tmp_path / "xr.history.csv").read_text().startswith("iteration,")
    assert (tmp_path / "xr_convergence.png").stat().st_size > 0
    assert (tmp_path / "xr_slices.png").stat().st_size > 0
    m = json.loads((tmp_path / "xr.metrics.json").read_text())
    assert m["psnr_mean"] == pytest.approx(psnr(x, xr))


def test_tikhonov_regime_accepted(tmp_path):
    cfg = base_cfg(tmp_path, prior="conv-dict-tikhonov", max_iters=5,
                   online_dict_update=True)
    cfg["prior"]["conv"] = {"M": 2, "L": 4}
    cfg["io"]["dictionary"] = str(tmp_path / "learned")
    path = write_cfg(tmp_path / "c.json", cfg)
    assert run(path, "simulate") == 0
    assert run(path, "reconstruct") == 3
    rep = json.loads((tmp_path / "xr.report.json").read_text())
    assert rep["config"]["mu_tik"] == 0.01
    assert (tmp_path / "learned" / "manifest.json").is_file()


def test_zero_iterations_writes_zeros_and_exits_3(tmp_path):
    cfg = base_cfg(tmp_path, max_iters=0)
    path = write_cfg(tmp_path / "c.json", cfg)
    assert run(path, "simulate") == 0
    assert run(path, "reconstruct") == 3
    assert np.array_equal(tensor.read_container(tmp_path / "xr.civs"),
                          np.zeros((2, 32, 32)))


def test_measurement_bank_mismatch_exits_2(tmp_path):
    cfg = base_cfg(tmp_path)
    path = write_cfg(tmp_path / "c.json", cfg)
    assert run(path, "simulate") == 0
    tensor.write_container(np.zeros((3, 32, 32)), tmp_path / "y.civs")
    assert run(path, "reconstruct") == 2


def test_nonfinite_measurement_exits_4(tmp_path):
    cfg = base_cfg(tmp_path)
    path = write_cfg(tmp_path / "c.json", cfg)
    assert run(path, "simulate") == 0
    bad = np.zeros((2, 32, 32))
    bad[0, 0, 0] = np.inf
    tensor.write_container(bad, tmp_path / "y.civs")
    assert run(path, "reconstruct") == 4


def test_seed_flag_overrides_config(tmp_path):
    cfg = base_cfg(tmp_path)
    path = write_cfg(tmp_path / "c.json", cfg)
    assert cli.main(["--config", path, "--seed", "9", "--threads", "2",
                     "simulate"]) == 0
    man = json.loads((tmp_path / "y.manifest.json").read_text())
    assert man["seed"] == 9


def test_score_identical(tmp_path, capsys):
    x = np.random.default_rng(0).uniform(size=(2, 16, 16))
    tensor.write_container(x, tmp_path / "x.civs")
    assert cli.main(["score", str(tmp_path / "x.civs"), str(tmp_path / "x.civs"),
                     "--out", str(tmp_path / "m.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["psnr_mean"] == "inf"
    assert out["ssim_mean"] == pytest.approx(1.0)
    assert out["sam_degrees"] == pytest.approx(0.0, abs=1e-6)
    assert json.loads((tmp_path / "m.json").read_text()) == out


def test_score_shape_mismatch(tmp_path):
    tensor.write_container(np.ones((2, 16, 16)), tmp_path / "a.civs")
    tensor.write_container(np.ones((1, 16, 16)), tmp_path / "b.civs")
    assert cli.main(["score", str(tmp_path / "a.civs"),
                     str(tmp_path / "b.civs")]) == 2


def test_export_png(tmp_path):
    x = np.random.default_rng(0).standard_normal((2, 12, 12))
    tensor.write_container(x, tmp_path / "s.civs")
    assert cli.main(["export-png", str(tmp_path / "s.civs"),
                     str(tmp_path / "png")]) == 0
    files = sorted((tmp_path / "png").glob("*.png"))
    assert len(files) == 2
    for f in files:
        img = Image.open(f)
        assert img.size == (12, 12) and img.mode == "L"
    side = json.loads((tmp_path / "png" / "s_png.json").read_text())
    assert side["min"] == x.min() and side["max"] == x.max()
    arr = np.asarray(Image.open(files[0]))
    assert arr.min() >= 0 and arr.max() <= 255


def test_export_png_unwritable(tmp_path):
    tensor.write_container(np.ones((1, 4, 4)), tmp_path / "s.civs")
    (tmp_path / "file").write_text("")
    assert cli.main(["export-png", str(tmp_path / "s.civs"),
                     str(tmp_path / "file" / "sub")]) == 2


def _planted(seed, N=32, L=8, p=0.02):
    """One random unit-norm filter convolved with Bernoulli-Gaussian codes."""
    r = np.random.default_rng(seed)
    d = r.standard_normal((L, L))
    d /= np.linalg.norm(d)
    z = (r.uniform(size=(N, N)) < p) * r.standard_normal((N, N))
    pad = np.zeros((N, N))
    pad[:L, :L] = d
    x = np.real(np.fft.ifft2(np.fft.fft2(pad) * np.fft.fft2(z)))
    return d, x[None]


def test_train_dict_planted(tmp_path):
    d_true, x = _planted(11)
    tensor.write_container(x, tmp_path / "train.civs")
    cfg = {"train": {"kind": "conv", "M": 1, "L": 8, "lam": 0.1, "rho": 1.0,
                     "sigma": 10.0, "max_iters": 100, "restarts": 24,
                     "lam_start": 1.0},
           "io": {"training": str(tmp_path / "train.civs"),
                  "dictionary": str(tmp_path / "dict")}}
    assert run(write_cfg(tmp_path / "c.json", cfg), "train-dict") == 0
    from convinv.convdict import ConvDictionary
    d = ConvDictionary.load(tmp_path / "dict").filters[0, 0]
    assert abs(np.sum(d * d_true)) > 0.95
    summary = json.loads((tmp_path / "dict.train.json").read_text())
    assert len(summary["restart_objectives"]) == 24


def test_train_patch_dictionary(tmp_path):
    x = np.random.default_rng(0).uniform(size=(1, 16, 16))
    tensor.write_container(x, tmp_path / "t.civs")
    cfg = {"train": {"kind": "patch", "Q": 4, "max_iters": 20},
           "io": {"training": str(tmp_path / "t.civs"),
                  "dictionary": str(tmp_path / "pd.civs")}}
    assert run(write_cfg(tmp_path / "c.json", cfg), "train-dict") == 0
    from convinv.patch import load_patch_dictionary
    D, geom = load_patch_dictionary(tmp_path / "pd.civs")
    assert D.shape == (16, 16) and geom.Q == 4
    assert abs(np.linalg.norm(D) - 1) < 1e-12
    # the trained dictionary plugs into a reconstruction
    rc = base_cfg(tmp_path, prior="patch-dict", max_iters=3,
                  dictionary=str(tmp_path / "pd.civs"))
    rc["forward"]["N"] = 16
    path = write_cfg(tmp_path / "r.json", rc)
    cli.main(["--config", path, "simulate"])
    assert cli.main(["--config", path, "reconstruct"]) == 3
