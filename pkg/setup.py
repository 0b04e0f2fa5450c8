#!/usr/bin/env python3

import os
import sys

from setuptools import setup

import iceline


assert sys.version_info > (3, 6)


def read(filename):
    return open(os.path.join(os.path.dirname(__file__), filename)).read()


setup(
    name="iceline",
    description="Stochastic ice-line energy-balance model",
    long_description=read("README.md"),
    long_description_content_type="text/markdown",
    version=iceline.__version__,
    license="MPL-2.0",
    platforms=["Unix"],
    packages=["iceline"],
    package_data={"iceline": ["templates/*.html"]},
    install_requires=["numpy", "scipy"],
    extras_require={"yaml": ["PyYAML"], "render": ["Jinja2"], "color": ["termcolor"]},
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Mozilla Public License 2.0 (MPL 2.0)",
        "Operating System :: POSIX",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3 :: Only",
        "Topic :: Scientific/Engineering :: Atmospheric Science",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    entry_points={
        "console_scripts": [
            "iceline = iceline.cli:main",
            "iceline-render = iceline.render:main",
        ]
    },
)
