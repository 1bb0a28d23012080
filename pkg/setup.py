#!/usr/bin/env python
"""clickpredict builder and installer."""
from setuptools import setup

if __name__ == '__main__':
    setup()
