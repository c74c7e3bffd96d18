"""Launcher: `pnpd-bridge --listen stdio --model classical`."""

import argparse
import sys

from .server import EndpointConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pnpd-bridge",
        description="Serve a denoiser over the PNPD wire protocol.",
    )
    parser.add_argument("--listen", default="stdio",
                        help="stdio | tcp:HOST:PORT | unix:/path.sock")
    parser.add_argument("--model", default="classical",
                        help="classical | torchscript")
    parser.add_argument("--weights", default=None, help="TorchScript archive path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--no-vjp", action="store_true",
                        help="do not advertise differentiation support")
    parser.add_argument("--sigma-min", type=float, default=None,
                        help="clamp requested noise levels from below")
    parser.add_argument("--sigma-max", type=float, default=None,
                        help="clamp requested noise levels from above")
    parser.add_argument("--announce-ready", action="store_true",
                        help="print the bound address on stderr when listening")
    args = parser.parse_args(argv)

    cfg = EndpointConfig(
        listen=args.listen,
        model=args.model,
        weights=args.weights,
        device=args.device,
        advertise_vjp=not args.no_vjp,
        sigma_min=args.sigma_min,
        sigma_max=args.sigma_max,
    )
    try:
        serve(cfg, ready_fh=sys.stderr if args.announce_ready else None)
    except (ValueError, OSError) as exc:
        print(f"pnpd-bridge: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
