// two statements tied by a dependence carried on j only, so i may be unrolled coarsely
void coupled(float A[16][16], float B[16][17]) {
  for (int i = 0; i < 16; i++)
    for (int j = 0; j < 16; j++) {
      A[i][j] = B[i][j] + 1;
      B[i][j + 1] = A[i][j] * 2;
    }
}
