"""dynlab: growth, value distribution and escaping-set dimension tools for entire functions."""
