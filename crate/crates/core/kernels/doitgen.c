void doitgen(float A[10][8][12], float C4[12][12], float sum[10][8][12]) {
  for (int r = 0; r < 10; r++)
    for (int q = 0; q < 8; q++)
      for (int p = 0; p < 12; p++) {
        sum[r][q][p] = 0;
        for (int s = 0; s < 12; s++)
          sum[r][q][p] += A[r][q][s] * C4[s][p];
      }
}
