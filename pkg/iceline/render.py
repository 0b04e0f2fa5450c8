#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

import argparse
import gzip
import json
import logging
import os
import sys

import jinja2

import iceline
from iceline import utils

__version__ = iceline.__version__

CSV_HEAD_ROWS = 10


def guess_autoescape(template_name):
    if template_name is None or "." not in template_name:
        return False
    (base, ext) = template_name.rsplit(".", 1)
    if ext == "jinja2":
        (base, ext) = base.rsplit(".", 1)
    return ext in ("html", "htm", "xml")


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        description="Stochastic ice-line energy-balance model - report renderer ({})".format(
            __version__
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=__version__,
        help="report the program version",
    )
    parser.add_argument("output_dir", type=str, help="experiment output directory")
    parser.add_argument(
        "--template-dir", type=str, default=None, help="directory of templates overriding the packaged ones"
    )
    parser.add_argument(
        "--output", "-o", type=str, default=None, help="report file (default <output_dir>/index.html)"
    )
    parser.add_argument(
        "--rows", type=int, default=CSV_HEAD_ROWS, help="rows shown from the head of each CSV"
    )
    parser.add_argument(
        "--debug", action="store_true", help="output additional debugging information"
    )
    return parser.parse_args(argv)


def write_html_file(filename, content):
    if filename.endswith(".gz"):
        with gzip.open(filename, "wb") as f:
            f.write(content.encode("utf-8"))
    else:
        with open(filename, "wb") as f:
            f.write(content.encode("utf-8"))


def csv_head(filename, n):
    columns, rows = utils.read_csv_file(filename)
    return {"columns": columns, "rows": rows[:n], "total_rows": len(rows)}


class Renderer:
    def __init__(self, args):
        self.args = args

        self.logger = logging.getLogger()
        self.logger.setLevel(logging.DEBUG)
        lh_console = logging.StreamHandler()
        lh_console_formatter = logging.Formatter("[%(asctime)s] %(levelname)s: %(message)s")
        lh_console.setFormatter(lh_console_formatter)
        if self.args.debug:
            lh_console.setLevel(logging.DEBUG)
        else:
            lh_console.setLevel(logging.INFO)
        self.logger.addHandler(lh_console)

        if self.args.template_dir:
            loader = jinja2.ChoiceLoader(
                [
                    jinja2.FileSystemLoader(self.args.template_dir),
                    jinja2.PackageLoader("iceline"),
                ]
            )
        else:
            loader = jinja2.PackageLoader("iceline")
        self.templates = jinja2.Environment(autoescape=guess_autoescape, loader=loader)
        self.templates.globals.update(
            {
                "version": __version__,
                "pretty": lambda v: json.dumps(v, sort_keys=True, indent=2),
            }
        )

    def load_reports(self, manifest):
        reports = []
        tables = []
        for name in manifest.get("artifacts", []):
            filename = os.path.join(self.args.output_dir, name)
            if not os.path.exists(filename):
                self.logger.warning("{}: listed in the manifest but missing".format(filename))
                continue
            if name.endswith(".json"):
                self.logger.debug("Reading {}".format(filename))
                reports.append({"name": name, "data": utils.load_structured_file(filename)})
            elif name.endswith(".csv"):
                self.logger.debug("Reading head of {}".format(filename))
                table = csv_head(filename, self.args.rows)
                table["name"] = name
                tables.append(table)
        return reports, tables

    def render(self):
        manifest_filename = os.path.join(self.args.output_dir, "manifest.json")
        manifest = utils.load_structured_file(manifest_filename)
        reports, tables = self.load_reports(manifest)
        content = self.templates.get_template("index.html").render(
            manifest=manifest,
            spec=manifest.get("spec", {}),
            reports=reports,
            tables=tables,
        )
        filename = self.args.output or os.path.join(self.args.output_dir, "index.html")
        self.logger.info("Writing {}".format(filename))
        write_html_file(filename, content)
        return filename

    def main(self):
        try:
            self.render()
        except (OSError, ValueError) as e:
            self.logger.error(str(e))
            return 1
        return 0


def main(argv=None):
    args = parse_args(argv)
    r = Renderer(args)
    return r.main()


if __name__ == "__main__":
    sys.exit(main())
