package org.jfree.data.category.junit;

import junit.framework.TestCase;
import org.jfree.data.category.DefaultIntervalCategoryDataset;

public class DefaultIntervalCategoryDatasetTests extends TestCase {

    public void testGetRowCount() {
        double[] starts_S1 = new double[] {0.1, 0.2, 0.3};
        double[][] starts = new double[][] {starts_S1};
        DefaultIntervalCategoryDataset d = new DefaultIntervalCategoryDataset(starts, starts);
        assertEquals(1, d.getRowCount());
    }

    /**
     * Some checks for the getCategoryIndex() method.
     */
    public void testGetCategoryIndex() {
        // check an empty dataset
        DefaultIntervalCategoryDataset empty
                = new DefaultIntervalCategoryDataset(new double[0][0],
                        new double[0][0]);
        assertEquals(-1, empty.getCategoryIndex("ABC"));
    }
}
