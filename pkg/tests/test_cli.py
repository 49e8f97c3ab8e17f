import pytest

from msdnet.cli import main

from tiny import tiny_args


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["gen-data", "--data", str(data)] + tiny_args()) == 0
    assert main(["train", "--data", str(data), "--out", str(run)] + tiny_args()) == 0
    return root


def test_gen_data_outputs(workspace):
    data = workspace / "data"
    assert (data / "train.clps").read_bytes()[:4] == b"CLPS"
    manifest = (data / "manifest.txt").read_text().splitlines()
    assert len(manifest) == 8 + 4
    assert manifest[0] == "train.clps#0\t0" and manifest[8] == "val.clps#0\t0"


def test_gen_data_refuses_overwrite(workspace, capsys):
    data = workspace / "data"
    before = (data / "train.clps").read_bytes()
    assert main(["gen-data", "--data", str(data), "--seed", "7"] + tiny_args()) == 4
    assert "--force" in capsys.readouterr().err
    assert (data / "train.clps").read_bytes() == before


def test_gen_data_force_with_new_seed(tmp_path):
    args = ["gen-data", "--data", str(tmp_path)] + tiny_args()
    assert main(args) == 0
    first = (tmp_path / "train.clps").read_bytes()
    assert main(args + ["--force", "--seed", "7"]) == 0
    assert (tmp_path / "train.clps").read_bytes() != first


def test_train_writes_run(workspace):
    run = workspace / "run"
    for name in ("metrics.tsv", "epochs.tsv", "config.txt", "final.ckpt", "best.ckpt"):
        assert (run / name).exists()
    assert "seed=0" in (run / "config.txt").read_text().splitlines()


def test_train_refuses_existing_run(workspace):
    args = ["train", "--data", str(workspace / "data"), "--out", str(workspace / "run")] + tiny_args()
    assert main(args) == 4


def test_train_twice_is_byte_identical(workspace, tmp_path):
    args = ["train", "--data", str(workspace / "data"), "--out", str(tmp_path)] + tiny_args()
    assert main(args) == 0
    for name in ("metrics.tsv", "final.ckpt", "best.ckpt"):
        assert (tmp_path / name).read_bytes() == (workspace / "run" / name).read_bytes()


def test_eval_prints_top1(workspace, capsys):
    ckpt = workspace / "run" / "final.ckpt"
    assert main(["eval", "--data", str(workspace / "data"), "--checkpoint", str(ckpt), "--clips", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("top1\t") and len(out) == 5


def test_export_masks_writes_eight_by_four(workspace, tmp_path):
    ckpt = workspace / "run" / "final.ckpt"
    out = tmp_path / "masks"
    code = main(["export-masks", "--data", str(workspace / "data"), "--checkpoint", str(ckpt), "--out", str(out), "--set", "model.t=2"] + tiny_args())
    assert code == 0
    assert len(list(out.iterdir())) == 2 * 4
    assert sorted(p.name for p in out.iterdir())[0] == "val000_f00_depth.pgm"


def test_export_masks_default_t_writes_32_files(tmp_path):
    data = tmp_path / "data"
    small = ["--set", "gen.num_train=4", "--set", "gen.num_val=2", "--set", "epochs=0"]
    assert main(["gen-data", "--data", str(data)] + small) == 0
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "run")] + small) == 0
    out = tmp_path / "masks"
    assert main(["export-masks", "--data", str(data), "--checkpoint", str(tmp_path / "run" / "final.ckpt"), "--out", str(out)]) == 0
    assert len(list(out.glob("*.pgm"))) == 3 * 8
    assert len(list(out.glob("*.ppm"))) == 8


def test_export_masks_stripped_checkpoint_errors(workspace, tmp_path, capsys):
    run = tmp_path / "run"
    args = ["train", "--data", str(workspace / "data"), "--out", str(run), "--msd", "off", "--epochs", "0"] + tiny_args()
    assert main(args) == 0
    code = main(["export-masks", "--data", str(workspace / "data"), "--checkpoint", str(run / "final.ckpt"), "--out", str(tmp_path / "m")])
    assert code == 2
    assert "stripped" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path):
    assert main(["gen-data", "--data", str(tmp_path), "--set", "model.widths=1,2"]) == 2
    assert main(["gen-data", "--data", str(tmp_path), "--set", "nonsense"]) == 2


def test_missing_files_exit_code(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 4
    assert main(["eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "x.ckpt")]) == 4
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 4


def test_bad_usage_exits_two():
    with pytest.raises(SystemExit) as info:
        main(["train", "--msd", "sometimes"])
    assert info.value.code == 2


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_numeric_failure_exit_code(workspace, tmp_path):
    args = ["train", "--data", str(workspace / "data"), "--out", str(tmp_path)] + tiny_args()
    assert main(args + ["--set", "optim.lr=1e30", "--set", "optim.clip_norm=none", "--epochs", "3"]) == 3


def test_gradcheck_names_corrupted_op(capsys):
    assert main(["gradcheck", "--no-network", "--corrupt-backward", "sigmoid"]) == 3
    err = capsys.readouterr().err
    assert "sigmoid" in err and "conv2d" not in err
