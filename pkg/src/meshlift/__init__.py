from meshlift._version import __version__  # noqa
