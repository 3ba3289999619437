"""Reference oracle peer: answers the remote wire protocol with a scripted oracle.

Run ``python -m mcnav.oracle_peer`` to serve on stdin/stdout, or pass
``--port`` to listen on a TCP socket.
"""
from __future__ import annotations

import argparse
import socket
import sys

from .reasoning import OracleConfig, ScriptedOracle, serve_stream


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m mcnav.oracle_peer")
    ap.add_argument("--port", type=int, help="listen on this TCP port instead of stdio")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    oracle = ScriptedOracle(OracleConfig(seed=args.seed))
    if args.port is None:
        serve_stream(oracle, sys.stdin, sys.stdout)
        return 0
    with socket.create_server((args.host, args.port)) as srv:
        while True:
            conn, _ = srv.accept()
            with conn, conn.makefile("r") as rf, conn.makefile("w") as wf:
                serve_stream(oracle, rf, wf)


if __name__ == "__main__":
    sys.exit(main())
