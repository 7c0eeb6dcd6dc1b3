if is_foo(x):
    x = foo(x)
y.bar(x)
def foo(fzz):
    return fzz
