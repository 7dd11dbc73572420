# hbtm package
