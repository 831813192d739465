import random
import socket

import pytest


def _udp_bindable(port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        try:
            s.bind(("", port))
            return True
        except OSError:
            return False


@pytest.fixture
def udp_port() -> int:
    """A discovery port private to one test, so tests cannot cross-talk."""
    for _ in range(64):
        port = random.randint(20000, 59000)
        if _udp_bindable(port):
            return port
    raise RuntimeError("could not find a free UDP port")
