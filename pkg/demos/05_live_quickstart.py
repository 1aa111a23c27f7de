"""The full command-line workflow, from site discovery to reports.

By default this only prints the commands with a short note on each, so
it is safe to run anywhere. Pass --live to actually execute a minimal
version against the real network: that sends DNS queries to public
resolvers and TCP SYNs to CDN edges, takes a few minutes (15 s prewarm
gap per measurement set), and needs outbound UDP/53 and TCP/443.

Run:  python3 demos/05_live_quickstart.py [--live]
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from dnscdn import cli

STEPS = [
    (
        "dnscdn discover --domains top-sites.csv --output sites.json",
        "Walk a ranked domain list (rank in column 1, domain in column 3),\n"
        "follow each CNAME chain, and keep dual-stack sites per CDN until\n"
        "the configured quotas are met.",
    ),
    (
        "dnscdn detect-isp",
        "Classify the resolvers in /etc/resolv.conf as ISP-provided or\n"
        "external by comparing their (egress) AS number with this host's.",
    ),
    (
        "dnscdn measure --sites sites.json --output campaign.jsonl",
        "One campaign: per website/resolver/family, a cache prewarm query,\n"
        "a 15 s gap, three timed queries, then three TCP handshakes to the\n"
        "edge the resolver mapped us to.",
    ),
    (
        "dnscdn fill-in --input campaign.jsonl",
        "Retry every unusable measurement set wholesale; sets that fail\n"
        "twice stay marked so the analysis can drop them.",
    ),
    (
        "dnscdn analyze --input campaign.jsonl --geo geo.json",
        "Aggregate stored campaigns into per-region median latency tables\n"
        "(CSV on stdout; --json for machines).",
    ),
    (
        "dnscdn report --input campaign.jsonl --kind penalty",
        "Plot-ready outputs: cdf, table, penalty (v6 minus v4), diversity\n"
        "(edge address spread), or hit-rate (TTL-based cache verdicts).",
    ),
    (
        "dnscdn import-atlas --dns dns.json --tls tls.json --output atlas.jsonl",
        "Convert RIPE Atlas DNS+TLS result files into the same record\n"
        "format, so desk measurements and probe fleets share one pipeline.",
    ),
]


def live_run() -> int:
    workdir = Path(tempfile.mkdtemp(prefix="dnscdn-demo-"))
    config_path = workdir / "config.json"
    campaign_path = workdir / "campaign.jsonl"
    # Two well-known dual-stack sites and two resolvers keep the live run
    # down to 8 measurement sets (about two and a half minutes).
    config_path.write_text(
        json.dumps(
            {
                "websites": [
                    ["akamai", "www.akamai.com"],
                    ["cloudflare-cdn", "www.cloudflare.com"],
                ],
                "resolvers": [
                    {"label": "google", "v4_address": "8.8.8.8",
                     "v6_address": "2001:4860:4860::8888", "ttl_quirk": "google-decrement"},
                    {"label": "quad9", "v4_address": "9.9.9.9", "v6_address": "2620:fe::fe"},
                ],
                "fanout": 4,
                "output_dir": str(workdir),
            },
            indent=2,
        )
    )
    print(f"work dir: {workdir}\n\n== measure ==")
    status = cli.main(["measure", "--config", str(config_path), "--output", str(campaign_path)])
    if status == 2 or not campaign_path.exists():
        print("measure failed; is outbound UDP/53 available?", file=sys.stderr)
        return status
    print("\n== analyze ==")
    cli.main(["analyze", "--input", str(campaign_path)])
    print("\n== report --kind penalty ==")
    cli.main(["report", "--input", str(campaign_path), "--kind", "penalty"])
    return status


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--live", action="store_true", help="actually measure (uses the network)")
    args = parser.parse_args()

    if args.live:
        sys.exit(live_run())

    print("The workflow, step by step (pass --live to run a minimal version):\n")
    for command, note in STEPS:
        print(f"  $ {command}")
        for line in note.splitlines():
            print(f"      {line}")
        print()


if __name__ == "__main__":
    main()
