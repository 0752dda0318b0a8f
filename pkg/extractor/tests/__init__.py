# Package marker: keeps this suite's conftest imported as tests.conftest so
# it cannot shadow the trainer suite's top-level conftest module when both
# run in one pytest invocation.
