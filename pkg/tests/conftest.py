from dataclasses import dataclass
from pathlib import Path

import pytest

from minimano.hot import parse_template
from minimano.world import World

TEMPLATES = Path(__file__).resolve().parent.parent / "templates"

_acceptance_results = {}


@pytest.fixture
def templates_dir():
    return TEMPLATES


@dataclass
class Env:
    world: World
    token: str
    tenant_id: str

    def parse(self, name):
        return parse_template((TEMPLATES / name).read_text())


def make_env(seed=42, hosts=None, policy=None) -> Env:
    """World provisioned with the inputs the worked examples reference."""
    world = World(seed=seed, hosts=hosts, policy=policy, template_dir=str(TEMPLATES))
    tenant = world.identity.tenant_by_name("admin")
    token = world.identity.authenticate("admin", "admin", "admin")
    world.provider.register_image(tenant.id, "ubuntu_cloud14", b"ubuntu cloud image")
    world.provider.create_flavor(tenant.id, "m1.small", 1, 2048, 20)
    world.provider.create_keypair(tenant.id, "my_key1")
    world.provider.create_network(tenant.id, "my_net1", "10.0.0.0/24")
    return Env(world=world, token=token.id, tenant_id=tenant.id)


@pytest.fixture
def env() -> Env:
    return make_env()


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, title): marks a test as one acceptance criterion"
    )


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        _acceptance_results[marker.args[0]] = (marker.args[1], report.outcome)
    return report


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_acceptance_results):
        title, outcome = _acceptance_results[num]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {status} - {title}")
