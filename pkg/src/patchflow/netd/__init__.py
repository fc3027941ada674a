"""Live multi-process mode: framed protocol and node daemons."""

from patchflow.netd.protocol import Message, MsgType, ProtocolError, decode, encode

__all__ = ["Message", "MsgType", "ProtocolError", "decode", "encode"]
