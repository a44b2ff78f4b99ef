import contextlib
import threading

import pytest

from model_server.app import create_server


@contextlib.contextmanager
def running(model):
    """Serve `model` on a free port for the duration of the block."""
    server = create_server(model)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    try:
        yield f"http://{host}:{port}"
    finally:
        server.shutdown()
        server.server_close()


@pytest.fixture
def serve():
    return running
