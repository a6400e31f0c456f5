import numpy as np
import pytest

from speakermia.corpus import CorpusSpec, build_corpus, plan_splits
from speakermia.nncore import TrainConfig

# narrow nets keep unit-level training runs to a second or two
SMALL_ARCH = {"channels": (8, 8, 8), "hidden": 16}


@pytest.fixture(scope="session")
def small_spec():
    return CorpusSpec(n_speakers=6, clips_per_speaker=16)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    return build_corpus(small_spec)


@pytest.fixture(scope="session")
def small_plan(small_corpus):
    return plan_splits(small_corpus, 0)


@pytest.fixture(scope="session")
def target_clips(small_corpus, small_plan):
    train = small_corpus.select(small_plan.keys("target", "in_train"))
    held = small_corpus.select(small_plan.keys("target", "in_eval") + small_plan.keys("target", "out_attack_eval"))
    return train, held


@pytest.fixture(scope="session")
def fast_config():
    return TrainConfig(batch_size=8, max_epochs=60, seed=0)


@pytest.fixture(scope="session")
def small_target(target_clips, fast_config):
    from speakermia.sid import train_sid
    train, held = target_clips
    return train_sid(train, held, fast_config, arch_options=SMALL_ARCH)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_experiment(small_spec, fast_config):
    from speakermia.attack import DEFAULT_ATTACK_CONFIG
    from speakermia.harness import ExperimentSpec, GridEntry
    return ExperimentSpec(corpus=small_spec,
                          grid=(GridEntry("baseline", (0.0,)), GridEntry("obfuscation", ("rank",))),
                          seeds=(0,), base_config=fast_config,
                          attack_config=DEFAULT_ATTACK_CONFIG.replace(max_epochs=200),
                          arch_options=SMALL_ARCH)


def pytest_terminal_summary(terminalreporter):
    lines, tables = [], []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if report.when == "call":
                lines += [v for k, v in report.user_properties if k == "criterion"]
                tables += [v for k, v in report.user_properties if k == "table"]
    for table in tables:
        terminalreporter.section("acceptance grid (medians over seeds, percent)")
        terminalreporter.write(table)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
