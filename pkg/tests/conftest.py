import pytest

SMALL_INI = """\
[experiment]
name = small
schemes = ef, cs, vip, 3d
[phantom]
seed = 7
n_tubes = 2
total_per_tube = 4
[grid]
x_min = -1.5e-3
x_max = 1.5e-3
y_min = -1.0e-3
y_max = 1.0e-3
z_min = 1.9e-2
z_max = 2.1e-2
spacing_z = 5e-5
[noise]
snr_db = 3
seed = 11
[localize]
threshold = 0.3
threshold_mode = stack
"""


@pytest.fixture(scope="session")
def small_ini_text():
    """A two-tube, four-frame experiment on a reduced grid; runs in seconds."""
    return SMALL_INI


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
