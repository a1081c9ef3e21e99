// (1,-1) dependence: interchanging i and j is illegal
void recurrence(float A[16][16]) {
  for (int i = 0; i < 15; i++)
    for (int j = 0; j < 15; j++)
      A[i + 1][j] = A[i][j + 1] * 2;
}
