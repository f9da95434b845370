"""Cross-view object mask matching.

Given a query object mask in a source view and candidate masks in a
destination view (with dense per-pixel feature maps for both), this
package learns an embedding in which the candidate that corresponds to
the query is the nearest neighbor, and evaluates the resulting matches.
"""

__version__ = "0.1.0"
