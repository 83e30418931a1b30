"""Grid-graph representation and generative modeling of city-block building layouts."""

__version__ = "0.1.0"
