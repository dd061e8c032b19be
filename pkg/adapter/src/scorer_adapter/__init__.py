"""Reference implementation of the NDJSON scoring protocol: wrap a model so
the saliency-evaluation engine can probe it as a black box."""

from .model import ToyLogisticModel, load_plugin, softmax
from .server import AdapterConfig, TcpAdapterServer, handle_line, serve, serve_stream
from .tnsr import TnsrError, read_tnsr

__version__ = "0.1.0"
