"""
Word run reports (python-docx).
"""
