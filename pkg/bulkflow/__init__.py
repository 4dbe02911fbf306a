"""bulkflow: surface Stokes and Navier-Stokes flow on all level sets of a bulk domain."""

__version__ = "0.1.0"
