"""Adjoint-based error estimates for the time to a threshold event."""
