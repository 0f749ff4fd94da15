package com.google.javascript.jscomp;

public class SemanticReverseAbstractInterpreterTest extends CompilerTypeTestCase {

  public void testGreatestSubtypeUnionTypes5() throws Exception {
    JSType errUnion = createUnionType(
        NO_OBJECT_TYPE, registry.getNativeType(JSTypeNative.ERROR_TYPE));
    assertEquals(NO_OBJECT_TYPE,
        errUnion.getGreatestSubtype(STRING_OBJECT_TYPE));
  }
}
