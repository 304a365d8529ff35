"""Bundled external-stage executables for protocol tests and as templates.

Run them as ``python -m dubpipe.plugins.echo`` (or ``.crash``). Both speak
the line-delimited wire protocol documented in the README.
"""
