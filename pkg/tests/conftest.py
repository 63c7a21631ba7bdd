import numpy as np
import pytest

from dnada.datapipe import build_split, synth_domains

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Append one pass/fail line to the acceptance summary."""
    def _report(tag: str, ok: bool | None, detail: str = ""):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _ACCEPTANCE.append(f"{tag:<4} {status}  {detail}")
        print(_ACCEPTANCE[-1])
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_split():
    src, tgt = synth_domains(20, 2, 4, 4.0, seed=3)
    return build_split(src, tgt, seed=3)


SYNTH_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def synthetic_runs():
    """DNA-DA and a source-only baseline on the 2-class, dim-8, shift-4 fixture.

    Default hyperparameters with epochs cut to 100; one entry per seed.
    """
    import time

    from dnada.trainer import TrainConfig, classifier_accuracy, evaluate, fit, fit_source_only

    runs = {}
    for seed in SYNTH_SEEDS:
        t0 = time.perf_counter()
        src, tgt = synth_domains(500, 2, 8, 4.0, seed=seed)
        split = build_split(src, tgt, seed=seed)
        cfg = TrainConfig(epochs=100, T=50, seed=seed)
        result = fit(split, cfg)
        acc = evaluate(result.models, split.test_target, cfg, np.random.default_rng([seed, 1]))
        base = classifier_accuracy(fit_source_only(split, cfg), split.test_target)
        runs[seed] = dict(split=split, cfg=cfg, result=result, acc=acc, base=base,
                          n_test=len(split.test_target), seconds=time.perf_counter() - t0)
    return runs
