#!/usr/bin/env python3
"""
vicos - Verifiable object storage on an untrusted server
Setup script
"""

from setuptools import setup, find_packages

# Read version from config
import json
with open('config/config.json', 'r') as f:
    config = json.load(f)
    VERSION = config['app']['version']

# Read requirements, runtime section only
RUNTIME_REQUIREMENTS = {"numpy", "scipy", "pycryptodomex", "pydantic", "click", "psutil"}
with open('requirements.txt', 'r') as f:
    requirements = [line.strip() for line in f
                    if line.strip() and not line.startswith('#')
                    and line.split('>=')[0].strip() in RUNTIME_REQUIREMENTS]

# Read README for long description
with open('README.md', 'r', encoding='utf-8') as f:
    long_description = f.read()

setup(
    name="vicos",
    version=VERSION,
    description="Fork-linearizable verifiable object storage over an untrusted server",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["src", "src.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Developers",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Security :: Cryptography",
        "Topic :: System :: Distributed Computing",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "black>=23.7.0",
            "ruff>=0.0.287",
            "mypy>=1.5.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "vicos=src.main:main",
        ],
    },
    include_package_data=True,
    zip_safe=False,
)
