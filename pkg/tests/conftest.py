import pytest

from keypos import SynthSpec, build_database, synth_trajectory, train_vocabulary_from_trajectory

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_traj():
    return synth_trajectory(SynthSpec.default(24, seed=7))


@pytest.fixture(scope="session")
def small_vocab(small_traj):
    return train_vocabulary_from_trajectory(small_traj)


@pytest.fixture(scope="session")
def small_db(small_traj, small_vocab):
    return build_database(small_traj, small_vocab)
